"""LLM consistency check: code stripping, judge prompting, boxed-verdict
extraction, and the recall/specificity qualification harness.

The judge sees the candidate after comments and attribute annotations are
stripped, answers free-form, and commits to ``$\\boxed{true}$`` or
``$\\boxed{false}$`` at the end.  Anything that fails to produce a parsable
box — including transport failure after retries — scores as ``unparsed``,
which downstream reward logic treats as false.  Scoring is total: no input
raises past the verdict contract.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .endpoints import EndpointError
from .prompts import render

log = logging.getLogger("formaforge.consistency")

BOXED_RE = re.compile(r"\\boxed\{(true|false)\}")


@dataclass
class CCSampling:
    temperature: float = 0.6
    min_p: float = 0.05
    max_tokens: int = 2048


@dataclass
class CCRequest:
    nl_statement: str
    fl_statement: str  # post-stripping
    judge: object  # chat endpoint
    sampling: CCSampling = field(default_factory=CCSampling)

    def __post_init__(self):
        if not self.nl_statement.strip():
            raise ValueError("consistency check needs a non-empty natural-language statement")


@dataclass
class CCVerdict:
    verdict: str  # "true" | "false" | "unparsed"
    transcript: str
    judge_identity: str
    flags: tuple[str, ...] = ()


def extract_boxed_answer(text: str) -> str:
    """Take the last \\boxed{true}/\\boxed{false} token in the text; judges
    often restate the format before concluding, so the final box is the
    conclusion.  Anything else is 'unparsed'."""
    last = None
    for match in BOXED_RE.finditer(text):
        last = match.group(1)
    return last if last is not None else "unparsed"


def _strip_with_flags(code: str) -> tuple[str, bool]:
    out: list[str] = []
    i = 0
    n = len(code)
    depth = 0
    unterminated = False
    while i < n:
        if depth > 0:
            if code.startswith("/-", i):
                depth += 1
                i += 2
            elif code.startswith("-/", i):
                depth -= 1
                i += 2
            else:
                i += 1
            continue
        ch = code[i]
        if ch == '"':
            # String literal: comments do not start inside it.
            out.append(ch)
            i += 1
            while i < n:
                out.append(code[i])
                if code[i] == "\\" and i + 1 < n:
                    out.append(code[i + 1])
                    i += 2
                    continue
                if code[i] == '"':
                    i += 1
                    break
                i += 1
            continue
        if code.startswith("--", i):
            while i < n and code[i] != "\n":
                i += 1
            continue
        if code.startswith("/-", i):
            depth = 1
            i += 2
            continue
        if code.startswith("@[", i):
            j = i + 2
            brackets = 1
            while j < n and brackets:
                if code[j] == "[":
                    brackets += 1
                elif code[j] == "]":
                    brackets -= 1
                j += 1
            if brackets == 0:
                i = j
                continue
        out.append(ch)
        i += 1
    if depth > 0:
        unterminated = True
    return "".join(out).strip("\n"), unterminated


def strip_comments_and_metadata(code: str) -> str:
    """Remove line comments, nestable block comments, and ``@[...]``
    attribute annotations; every other byte is preserved.  An unterminated
    block comment strips to end of input."""
    text, unterminated = _strip_with_flags(code)
    if unterminated:
        log.warning("unterminated block comment; stripped to end of input")
    return text


def render_cc_prompt(nl_statement: str, fl_statement: str) -> str:
    if not nl_statement or not fl_statement:
        raise ValueError("consistency prompt needs non-empty statements")
    return render("consistency", nl_statement=nl_statement, fl_statement=fl_statement)


def check_consistency(req: CCRequest) -> CCVerdict:
    """One judge sample, one verdict.  The endpoint client owns retries; if
    it still fails, the verdict is 'unparsed' (scored false downstream)."""
    identity = getattr(req.judge, "identity", str(req.judge))
    flags: tuple[str, ...] = ()
    stripped, unterminated = _strip_with_flags(req.fl_statement)
    if unterminated:
        flags += ("unterminated_block_comment",)
    if not stripped.strip():
        # The judge template itself rules an empty statement false; no
        # point paying for the call.
        return CCVerdict(
            verdict="false",
            transcript="",
            judge_identity=identity,
            flags=flags + ("empty_after_strip",),
        )
    prompt = render_cc_prompt(req.nl_statement, stripped)
    try:
        completions = req.judge.complete(
            [{"role": "user", "content": prompt}],
            n=1,
            temperature=req.sampling.temperature,
            min_p=req.sampling.min_p,
            max_tokens=req.sampling.max_tokens,
        )
    except EndpointError as exc:
        log.warning("judge %s unreachable, scoring unparsed: %s", identity, exc)
        return CCVerdict(
            verdict="unparsed",
            transcript="",
            judge_identity=identity,
            flags=flags + ("transport_failure",),
        )
    transcript = completions[0].text
    return CCVerdict(
        verdict=extract_boxed_answer(transcript),
        transcript=transcript,
        judge_identity=identity,
        flags=flags,
    )


@dataclass
class QualifyStats:
    """Outcome of a recall or specificity run.

    ``positives`` counts the pairs in the rate's numerator (accepted for
    recall, rejected for specificity); ``skipped`` counts pairs whose
    perturbation failed and that were excluded from the denominator."""

    rate: float
    positives: int
    total: int
    skipped: int = 0


def qualify_recall(
    pairs: list[tuple[str, str]],
    judge,
    sampling: CCSampling | None = None,
) -> QualifyStats:
    """Fraction of (nl, ground-truth fl) pairs the judge accepts."""
    if not pairs:
        raise ValueError("qualify_recall needs at least one pair")
    sampling = sampling or CCSampling()
    accepted = 0
    for nl, fl in pairs:
        verdict = check_consistency(CCRequest(nl, fl, judge, sampling))
        if verdict.verdict == "true":
            accepted += 1
        elif verdict.verdict == "unparsed":
            log.info("recall pair scored unparsed (counted as rejection)")
    return QualifyStats(rate=accepted / len(pairs), positives=accepted, total=len(pairs))


class PerturbationError(RuntimeError):
    pass


def _normalized(code: str) -> str:
    stripped, _ = _strip_with_flags(code)
    return " ".join(stripped.split())


def perturb_statement(
    nl_statement: str,
    ground_truth_fl: str,
    generator,
    attempts: int = 3,
    sampling: CCSampling | None = None,
) -> str:
    """Ask the generator for a deliberately wrong translation by adding,
    removing, or altering conditions or conclusions.  An echo of the
    original (after stripping and whitespace normalization) or a response
    without a lean block is retried, then the pair is skipped."""
    from .rollout import extract_lean_block

    sampling = sampling or CCSampling()
    prompt = render(
        "perturbation", nl_statement=nl_statement, fl_statement=ground_truth_fl
    )
    original_key = _normalized(ground_truth_fl)
    for attempt in range(attempts):
        try:
            completions = generator.complete(
                [{"role": "user", "content": prompt}],
                n=1,
                temperature=sampling.temperature,
                min_p=sampling.min_p,
                max_tokens=sampling.max_tokens,
            )
        except EndpointError as exc:
            log.warning("perturbation generator failed (attempt %d): %s", attempt + 1, exc)
            continue
        code = extract_lean_block(completions[0].text)
        if code is None:
            log.info("perturbation attempt %d returned no lean block", attempt + 1)
            continue
        if _normalized(code) == original_key:
            log.info("perturbation attempt %d echoed the original", attempt + 1)
            continue
        return code
    raise PerturbationError(
        f"no usable perturbation after {attempts} attempts"
    )


def qualify_specificity(
    pairs: list[tuple[str, str]],
    generator,
    judge,
    attempts: int = 3,
    sampling: CCSampling | None = None,
) -> QualifyStats:
    """Fraction of successfully perturbed statements the judge rejects.
    Pairs whose perturbation fails are skipped and excluded from the
    denominator; the skip count is reported on the result."""
    if not pairs:
        raise ValueError("qualify_specificity needs at least one pair")
    sampling = sampling or CCSampling()
    rejected = 0
    judged = 0
    skipped = 0
    for nl, fl in pairs:
        try:
            perturbed = perturb_statement(nl, fl, generator, attempts=attempts, sampling=sampling)
        except PerturbationError as exc:
            skipped += 1
            log.warning("skipping pair: %s", exc)
            continue
        judged += 1
        verdict = check_consistency(CCRequest(nl, perturbed, judge, sampling))
        if verdict.verdict != "true":
            rejected += 1
    rate = rejected / judged if judged else 0.0
    return QualifyStats(rate=rate, positives=rejected, total=judged, skipped=skipped)
