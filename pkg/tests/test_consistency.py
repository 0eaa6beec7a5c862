from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formaforge import prompts
from formaforge.consistency import (
    CCRequest,
    CCSampling,
    PerturbationError,
    QualifyStats,
    check_consistency,
    extract_boxed_answer,
    perturb_statement,
    qualify_recall,
    qualify_specificity,
    render_cc_prompt,
    strip_comments_and_metadata,
)
from formaforge.endpoints import EndpointError
from formaforge.mocks import MockEndpoint, Script


class DeadEndpoint:
    identity = "dead:endpoint"

    def complete(self, *args, **kwargs):
        raise EndpointError("endpoint down")


def scripted_judge(prompt_to_responses: dict[str, list[str]]) -> MockEndpoint:
    script = Script()
    for prompt, responses in prompt_to_responses.items():
        script.add_prompt(prompt, responses)
    return MockEndpoint(script, name="judge")


# ------------------------------------------------------------------ stripping


def test_strip_line_comment():
    assert strip_comments_and_metadata("-- note\ntheorem t : True := sorry") == (
        "theorem t : True := sorry"
    )


def test_strip_identity_without_comments():
    code = "theorem t (n : Nat) : n = n := sorry"
    assert strip_comments_and_metadata(code) == code


def test_strip_nested_block_comment():
    assert strip_comments_and_metadata(
        "/- a /- nested -/ b -/theorem t : True := sorry"
    ) == "theorem t : True := sorry"


def test_strip_attribute_annotations():
    assert strip_comments_and_metadata(
        "@[simp]\ntheorem t : True := sorry"
    ) == "\ntheorem t : True := sorry".strip("\n")
    assert strip_comments_and_metadata(
        "@[simp, to_additive (attr := simp)] lemma l : True := sorry"
    ) == " lemma l : True := sorry"


def test_strip_unterminated_block_runs_to_end():
    assert strip_comments_and_metadata("theorem t : True := sorry /- dangling") == (
        "theorem t : True := sorry "
    )


def test_strip_preserves_string_literals():
    code = 'example : "a -- b" = "a -- b" := sorry'
    assert strip_comments_and_metadata(code) == code


def test_strip_trailing_line_comment_keeps_newline_structure():
    code = "theorem t : True := sorry -- done\nexample : True := sorry"
    assert strip_comments_and_metadata(code) == (
        "theorem t : True := sorry \nexample : True := sorry"
    )


_FRAGMENTS = st.lists(
    st.sampled_from(
        [
            "theorem t : True := sorry",
            "example : 1 + 1 = 2 := sorry\n",
            "-- a line comment\n",
            "/- block -/",
            "/- outer /- inner -/ tail -/",
            "@[simp]",
            "@[to_additive (attr := simp)]\n",
            '"string with -- inside"',
            " (h : n > 0) ",
            "\n",
        ]
    ),
    min_size=0,
    max_size=12,
)


@given(_FRAGMENTS)
@settings(max_examples=200, deadline=None)
def test_strip_is_idempotent(fragments):
    code = "".join(fragments)
    once = strip_comments_and_metadata(code)
    assert strip_comments_and_metadata(once) == once


# ------------------------------------------------------------ boxed answers

BOXED_CASES = [
    ("therefore $\\boxed{true}$", "true"),
    ("conclusion: \\boxed{true}", "true"),
    ("the answer is $\\boxed{false}$.", "false"),
    ("\\boxed{false}", "false"),
    ("", "unparsed"),
    ("no box anywhere", "unparsed"),
    ("\\boxed{false} ... later \\boxed{true}", "true"),
    ("\\boxed{true} ... later \\boxed{false}", "false"),
    ("\\boxed{true", "unparsed"),          # unterminated box
    ("\\boxed{maybe}", "unparsed"),        # not a boolean
    ("format is $\\boxed{true}$ or $\\boxed{false}$ -> $\\boxed{false}$", "false"),
    ("\\boxed{True}", "unparsed"),         # wrong case is not a verdict token
]


@pytest.mark.parametrize("text,expected", BOXED_CASES)
def test_boxed_answer_table(text, expected):
    assert extract_boxed_answer(text) == expected


# ---------------------------------------------------------------- rendering


def test_cc_prompt_matches_golden_template():
    rendered = render_cc_prompt("Prove P.", "theorem p : P := sorry")
    expected = (
        prompts.template_text("consistency")
        .replace("{nl_statement}", "Prove P.")
        .replace("{fl_statement}", "theorem p : P := sorry")
    )
    assert rendered == expected
    assert "figure out wether they are equivalent" in rendered


def test_cc_prompt_requires_nonempty_inputs():
    with pytest.raises(ValueError):
        render_cc_prompt("", "x")
    with pytest.raises(ValueError):
        render_cc_prompt("x", "")


# ------------------------------------------------------------ check_consistency


def test_check_consistency_parses_boxed_true():
    nl, fl = "Prove 1+1=2.", "example : 1+1=2 := sorry"
    judge = scripted_judge({render_cc_prompt(nl, fl): ["Yes. $\\boxed{true}$"]})
    verdict = check_consistency(CCRequest(nl, fl, judge))
    assert verdict.verdict == "true"
    assert verdict.judge_identity == "mock:judge"
    assert "$\\boxed{true}$" in verdict.transcript


def test_check_consistency_free_text_is_unparsed():
    nl, fl = "Prove 1+1=2.", "example : 1+1=2 := sorry"
    judge = scripted_judge({render_cc_prompt(nl, fl): ["they look fine to me"]})
    assert check_consistency(CCRequest(nl, fl, judge)).verdict == "unparsed"


def test_check_consistency_endpoint_down_is_unparsed():
    verdict = check_consistency(CCRequest("Prove P.", "theorem t : P := sorry", DeadEndpoint()))
    assert verdict.verdict == "unparsed"
    assert "transport_failure" in verdict.flags


def test_check_consistency_strips_before_judging():
    nl = "Prove 1+1=2."
    raw = "-- chatter\nexample : 1+1=2 := sorry"
    stripped = "example : 1+1=2 := sorry"
    judge = scripted_judge({render_cc_prompt(nl, stripped): ["$\\boxed{true}$"]})
    assert check_consistency(CCRequest(nl, raw, judge)).verdict == "true"


def test_check_consistency_all_comment_code_scores_false_without_a_call():
    judge = scripted_judge({})
    verdict = check_consistency(CCRequest("Prove P.", "-- nothing here", judge))
    assert verdict.verdict == "false"
    assert "empty_after_strip" in verdict.flags
    assert judge.calls == []


def test_check_consistency_rejects_empty_nl():
    with pytest.raises(ValueError):
        CCRequest("  ", "x", DeadEndpoint())


def test_cc_sampling_defaults_match_documented_settings():
    s = CCSampling()
    assert (s.temperature, s.min_p, s.max_tokens) == (0.6, 0.05, 2048)


# ------------------------------------------------------------- qualification


def _pairs(n):
    return [(f"Prove statement {i}.", f"theorem t{i} : P{i} := sorry") for i in range(n)]


def test_qualify_recall_arithmetic():
    pairs = _pairs(10)
    script = Script()
    for i, (nl, fl) in enumerate(pairs):
        answer = "$\\boxed{true}$" if i != 7 else "$\\boxed{false}$"
        script.add_prompt(render_cc_prompt(nl, fl), [answer])
    stats = qualify_recall(pairs, MockEndpoint(script))
    assert stats == QualifyStats(rate=0.9, positives=9, total=10, skipped=0)


def test_qualify_recall_zero_accepted():
    pairs = _pairs(3)
    script = Script()
    for nl, fl in pairs:
        script.add_prompt(render_cc_prompt(nl, fl), ["$\\boxed{false}$"])
    assert qualify_recall(pairs, MockEndpoint(script)).rate == 0.0


def test_qualify_recall_needs_pairs():
    with pytest.raises(ValueError):
        qualify_recall([], DeadEndpoint())


def _perturbation_prompt(nl, fl):
    return prompts.render("perturbation", nl_statement=nl, fl_statement=fl)


def test_perturb_statement_returns_modified_code():
    nl, fl = "Prove P.", "theorem t (h : A) : B := sorry"
    gen = scripted_judge(
        {_perturbation_prompt(nl, fl): ["```lean\ntheorem t : B := sorry\n```"]}
    )
    assert perturb_statement(nl, fl, gen) == "theorem t : B := sorry"


def test_perturb_statement_rejects_echo_then_skips():
    nl, fl = "Prove P.", "theorem t : B := sorry"
    echo = f"```lean\n{fl}\n```"
    gen = scripted_judge({_perturbation_prompt(nl, fl): [echo, echo, echo]})
    with pytest.raises(PerturbationError):
        perturb_statement(nl, fl, gen, attempts=3)


def test_perturb_statement_rejects_comment_only_difference():
    nl, fl = "Prove P.", "theorem t : B := sorry"
    echo = "```lean\n-- cosmetic\ntheorem t :   B := sorry\n```"
    gen = scripted_judge({_perturbation_prompt(nl, fl): [echo] * 3})
    with pytest.raises(PerturbationError):
        perturb_statement(nl, fl, gen, attempts=3)


def test_perturb_statement_retries_past_missing_fence():
    nl, fl = "Prove P.", "theorem t : B := sorry"
    gen = scripted_judge(
        {_perturbation_prompt(nl, fl): ["no code here", "```lean\ntheorem t : C := sorry\n```"]}
    )
    assert perturb_statement(nl, fl, gen) == "theorem t : C := sorry"


def test_qualify_specificity_arithmetic_with_skips():
    pairs = _pairs(12)
    gen_script = Script()
    judge_script = Script()
    for i, (nl, fl) in enumerate(pairs):
        if i >= 10:
            # generator keeps echoing: pair is skipped after the budget
            gen_script.add_prompt(_perturbation_prompt(nl, fl), [f"```lean\n{fl}\n```"] * 3)
            continue
        perturbed = f"theorem t{i} : WRONG := sorry"
        gen_script.add_prompt(_perturbation_prompt(nl, fl), [f"```lean\n{perturbed}\n```"])
        verdict = "$\\boxed{false}$" if i < 8 else "$\\boxed{true}$"
        judge_script.add_prompt(render_cc_prompt(nl, perturbed), [verdict])
    stats = qualify_specificity(pairs, MockEndpoint(gen_script), MockEndpoint(judge_script))
    assert stats == QualifyStats(rate=0.8, positives=8, total=10, skipped=2)


def test_qualify_specificity_all_rejected():
    pairs = _pairs(4)
    gen_script = Script()
    judge_script = Script()
    for i, (nl, fl) in enumerate(pairs):
        perturbed = f"theorem broken{i} : Q := sorry"
        gen_script.add_prompt(_perturbation_prompt(nl, fl), [f"```lean\n{perturbed}\n```"])
        judge_script.add_prompt(render_cc_prompt(nl, perturbed), ["$\\boxed{false}$"])
    stats = qualify_specificity(pairs, MockEndpoint(gen_script), MockEndpoint(judge_script))
    assert stats.rate == 1.0 and stats.skipped == 0
