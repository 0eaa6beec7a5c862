from __future__ import annotations

import sys
import time
from pathlib import Path

import pytest

from formaforge.leancheck import (
    LEAN_HEADER,
    CheckRequest,
    LeanCheckError,
    LeanConfig,
    LeanPool,
    classify_messages,
    strip_imports,
    wrap_with_header,
)

FAKE_REPL = str(Path(__file__).parent / "fake_repl.py")


def fake_pool(pool_size=1, timeout=5.0, **kwargs) -> LeanPool:
    cfg = LeanConfig(
        command=[sys.executable, FAKE_REPL],
        project_dir=None,
        timeout=timeout,
        pool_size=pool_size,
        startup_timeout=10.0,
        **kwargs,
    )
    return LeanPool(cfg)


# ------------------------------------------------------------ pure helpers


def test_wrap_with_header_layout():
    code = "example : 1+1=2 := sorry"
    wrapped = wrap_with_header(code)
    assert wrapped == LEAN_HEADER + "\n\n" + code
    assert wrapped.startswith("import Mathlib\nimport Aesop\nset_option maxHeartbeats 0\n")
    assert wrapped.endswith(code)


def test_wrap_does_not_dedup_caller_imports():
    code = "import Mathlib\ntheorem t : True := sorry"
    assert wrap_with_header(code) == LEAN_HEADER + "\n\n" + code


def test_wrap_rejects_empty_code():
    with pytest.raises(LeanCheckError):
        wrap_with_header("")


def test_header_block_is_the_documented_one():
    assert LEAN_HEADER.splitlines() == [
        "import Mathlib",
        "import Aesop",
        "set_option maxHeartbeats 0",
        "open Topology",
        "open BigOperators",
        "open Nat",
        "open Real",
        "open Rat",
    ]


def test_strip_imports_removes_leading_imports():
    assert strip_imports("import Mathlib\ntheorem t : True := sorry") == (
        "theorem t : True := sorry"
    )
    assert strip_imports(
        "import Mathlib\nimport Aesop\nset_option maxHeartbeats 400000\nexample : True := sorry"
    ) == "example : True := sorry"


def test_strip_imports_identity_without_imports():
    code = "theorem t : True := sorry"
    assert strip_imports(code) == code


def test_strip_imports_keeps_non_leading_import():
    code = "theorem t : True := sorry\nimport X"
    assert strip_imports(code) == code


def test_strip_imports_preserves_other_leading_lines():
    code = "open Real\nimport Mathlib\nexample : True := sorry"
    assert strip_imports(code) == "open Real\nexample : True := sorry"


def test_classify_messages_severity_rule():
    status, diags = classify_messages(
        [{"severity": "warning", "data": "declaration uses 'sorry'", "pos": {"line": 1, "column": 2}}]
    )
    assert status == "pass"
    assert diags[0].severity == "warning" and diags[0].line == 1 and diags[0].col == 2

    status, _ = classify_messages(
        [
            {"severity": "warning", "data": "w"},
            {"severity": "error", "data": "boom"},
            {"severity": "info", "data": "i"},
        ]
    )
    assert status == "fail"

    status, diags = classify_messages([])
    assert status == "pass" and diags == []


def test_check_request_preconditions():
    with pytest.raises(LeanCheckError):
        CheckRequest("id", "")
    with pytest.raises(LeanCheckError):
        CheckRequest("id", "example : True := sorry", timeout=0)


# --------------------------------------------------------------- pool tests


def test_pool_pass_and_fail_verdicts():
    with fake_pool() as pool:
        passing = pool.check_syntax(CheckRequest("a", "example : 1+1=2 := sorry"))
        assert passing.status == "pass"
        assert any("sorry" in d.text for d in passing.diagnostics)
        assert all(d.severity != "error" for d in passing.diagnostics)

        failing = pool.check_syntax(CheckRequest("b", "theorem t : ERRMSG := sorry"))
        assert failing.status == "fail"
        assert any(d.severity == "error" for d in failing.diagnostics)


def test_pool_determinism_across_repeats():
    with fake_pool() as pool:
        statuses = {
            pool.check_syntax(CheckRequest("r", "example : 1+1=2 := sorry")).status
            for _ in range(5)
        }
    assert statuses == {"pass"}


def test_timeout_recycles_worker_and_next_request_succeeds():
    with fake_pool(timeout=5.0) as pool:
        verdict = pool.check_syntax(CheckRequest("t", "theorem HANG : True := sorry", timeout=0.5))
        assert verdict.status == "timeout"
        healthy = pool.check_syntax(CheckRequest("ok", "example : 1+1=2 := sorry"))
        assert healthy.status == "pass"


def test_worker_crash_yields_worker_error_then_recovers():
    with fake_pool() as pool:
        verdict = pool.check_syntax(CheckRequest("c", "theorem CRASH : True := sorry"))
        assert verdict.status == "worker_error"
        healthy = pool.check_syntax(CheckRequest("ok", "example : 1+1=2 := sorry"))
        assert healthy.status == "pass"


def test_batch_preserves_input_order_under_parallelism():
    # Stagger response times so completion order differs from input order.
    reqs = [
        CheckRequest("0", "example : SLEEP:0.4 = x := sorry"),
        CheckRequest("1", "theorem t : ERRMSG := rfl"),
        CheckRequest("2", "example : SLEEP:0.1 = x := sorry"),
        CheckRequest("3", "example : 1+1=2 := sorry"),
    ]
    with fake_pool(pool_size=4) as pool:
        verdicts = pool.check_batch(reqs, parallelism=4)
    assert [v.status for v in verdicts] == ["pass", "fail", "pass", "pass"]


def test_batch_sequential_case():
    reqs = [CheckRequest(str(i), "example : 1+1=2 := sorry") for i in range(3)]
    with fake_pool(pool_size=1) as pool:
        verdicts = pool.check_batch(reqs, parallelism=1)
    assert [v.status for v in verdicts] == ["pass"] * 3


def test_batch_isolates_timeouts():
    reqs = [
        CheckRequest("0", "example : 1+1=2 := sorry"),
        CheckRequest("1", "theorem HANG : True := sorry", timeout=0.5),
        CheckRequest("2", "example : 1+1=2 := sorry"),
    ]
    with fake_pool(pool_size=2) as pool:
        verdicts = pool.check_batch(reqs, parallelism=2)
    assert [v.status for v in verdicts] == ["pass", "timeout", "pass"]


def test_many_identical_requests_under_parallelism():
    reqs = [CheckRequest(str(i), "example : 1+1=2 := sorry") for i in range(100)]
    with fake_pool(pool_size=4) as pool:
        verdicts = pool.check_batch(reqs, parallelism=8)
    assert len(verdicts) == 100
    assert all(v.status == "pass" for v in verdicts)


def test_requests_past_pool_size_queue_up():
    reqs = [CheckRequest(str(i), "example : SLEEP:0.2 = x := sorry") for i in range(4)]
    with fake_pool(pool_size=1) as pool:
        start = time.monotonic()
        verdicts = pool.check_batch(reqs, parallelism=4)
        elapsed = time.monotonic() - start
    assert all(v.status == "pass" for v in verdicts)
    assert elapsed >= 0.75  # serialized on the single worker, none dropped


def test_invalid_parallelism():
    with fake_pool() as pool:
        with pytest.raises(LeanCheckError):
            pool.check_batch([], parallelism=0)


def test_wall_time_stays_within_timeout_budget():
    with fake_pool() as pool:
        start = time.monotonic()
        verdict = pool.check_syntax(CheckRequest("t", "theorem HANG : x := sorry", timeout=0.6))
        elapsed = time.monotonic() - start
    assert verdict.status == "timeout"
    assert elapsed < 5.0
