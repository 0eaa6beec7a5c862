from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

from formaforge.consistency import render_cc_prompt
from formaforge.leancheck import CheckRequest
from formaforge.mocks import (
    MockChecker,
    MockEndpoint,
    Script,
    ScriptExhaustedError,
    UnknownRequestError,
    classify_prompt,
    mock_check,
    request_fingerprint,
)
from formaforge.rollout import render_formalization_prompt
from formaforge.records import Problem

FIXTURES = Path(__file__).parent / "fixtures"


def test_fingerprint_is_stable_and_template_aware():
    messages = [{"role": "user", "content": render_cc_prompt("Prove P.", "theorem t : P := sorry")}]
    fp1 = request_fingerprint(messages)
    fp2 = request_fingerprint([dict(m) for m in messages])
    assert fp1 == fp2
    assert fp1.startswith("consistency:")

    problem = Problem("p", "Prove P.", "Algebra", "proof", "unit")
    fp3 = request_fingerprint([{"role": "user", "content": render_formalization_prompt(problem)}])
    assert fp3.startswith("formalize:")
    assert classify_prompt([{"role": "user", "content": "hello"}]) == "raw"


def test_scripted_responses_in_order():
    script = Script()
    fp = script.add_prompt("ping", ["one", "two"])
    endpoint = MockEndpoint(script)
    messages = [{"role": "user", "content": "ping"}]
    assert endpoint.complete(messages)[0].text == "one"
    assert endpoint.complete(messages)[0].text == "two"
    assert endpoint.calls == [fp, fp]


def test_unknown_request_error_names_fingerprint():
    endpoint = MockEndpoint(Script())
    with pytest.raises(UnknownRequestError) as err:
        endpoint.complete([{"role": "user", "content": "surprise"}])
    assert "raw:" in str(err.value)


def test_exhaustion_policies():
    strict = Script()
    strict.add_prompt("ping", ["only"])
    mock = MockEndpoint(strict)
    messages = [{"role": "user", "content": "ping"}]
    assert mock.complete(messages)[0].text == "only"
    with pytest.raises(ScriptExhaustedError):
        mock.complete(messages)

    repeat = Script(exhaustion="repeat_last")
    repeat.add_prompt("ping", ["a", "b"])
    mock = MockEndpoint(repeat)
    texts = [mock.complete(messages)[0].text for _ in range(4)]
    assert texts == ["a", "b", "b", "b"]


def test_n_sampling_consumes_entries_atomically():
    script = Script()
    script.add_prompt("ping", ["r0", "r1", "r2", "r3"])
    endpoint = MockEndpoint(script)
    out = endpoint.complete([{"role": "user", "content": "ping"}], n=4)
    assert [c.text for c in out] == ["r0", "r1", "r2", "r3"]


def test_cursor_advance_is_thread_safe():
    script = Script()
    script.add_prompt("ping", [str(i) for i in range(64)])
    endpoint = MockEndpoint(script)
    messages = [{"role": "user", "content": "ping"}]
    with ThreadPoolExecutor(max_workers=8) as pool:
        texts = [f.result()[0].text for f in [pool.submit(endpoint.complete, messages) for _ in range(64)]]
    assert sorted(texts, key=int) == [str(i) for i in range(64)]


def test_script_save_load_round_trip(tmp_path):
    script = Script(exhaustion="repeat_last")
    script.add_prompt("ping", ["pong"])
    path = script.save(tmp_path / "script.json")
    loaded = Script.load(path)
    assert loaded.entries == script.entries
    assert loaded.exhaustion == "repeat_last"


def test_checked_in_script_fixture_loads():
    script = Script.load(FIXTURES / "sample_script.json")
    endpoint = MockEndpoint(script)
    verdicts = endpoint.complete(
        [{"role": "user", "content": render_cc_prompt("Prove that 1+1=2.", "example : 1+1=2 := sorry")}]
    )
    assert "\\boxed{true}" in verdicts[0].text
    messages = [{"role": "user", "content": "ping"}]
    assert [endpoint.complete(messages)[0].text for _ in range(3)] == [
        "pong one", "pong two", "pong two",
    ]


# ------------------------------------------------------------- mock checker


@pytest.mark.parametrize(
    "code,status",
    [
        ("example : True := sorry", "pass"),
        ("theorem t : 1+1=2 := sorry", "pass"),
        ("-- SCFAIL\nexample : True := sorry", "fail"),
        ("example : True := by trivial", "fail"),
        ("just some text", "fail"),
        ("lemma l : P := sorry", "pass"),
    ],
)
def test_mock_check_rules(code, status):
    assert mock_check(code).status == status


def test_mock_check_empty_fails():
    assert mock_check("").status == "fail"


def test_mock_checker_logs_calls():
    checker = MockChecker()
    reqs = [
        CheckRequest("a", "example : True := sorry"),
        CheckRequest("b", "nonsense"),
    ]
    verdicts = checker.check_batch(reqs, parallelism=2)
    assert [v.status for v in verdicts] == ["pass", "fail"]
    assert checker.calls == ["example : True := sorry", "nonsense"]


def test_mock_verdicts_follow_severity_rule():
    passing = mock_check("example : True := sorry")
    assert all(d.severity != "error" for d in passing.diagnostics)
    failing = mock_check("SCFAIL")
    assert any(d.severity == "error" for d in failing.diagnostics)
