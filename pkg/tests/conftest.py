from __future__ import annotations

ACCEPTANCE_MODULE = "test_acceptance"


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when != "call" or ACCEPTANCE_MODULE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.passed:
        outcome = "PASS"
    elif report.failed:
        outcome = "FAIL"
    else:
        outcome = "SKIP"
    print(f"\nACCEPTANCE {name}: {outcome}")


def pytest_runtest_setup(item):
    pass
