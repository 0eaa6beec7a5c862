"""pass@k evaluation with the first-syntax-passer rule.

A problem counts toward the SC pass rate iff any of its k candidates clears
the compiler; only the first such candidate is judged, and the problem
counts toward the final pass rate iff that single judgment is true.  A
later candidate that would have been judged true does not count — the
selection rule is deliberately stricter than "any candidate passes both".

Every candidate verdict is persisted, so pass@k for smaller k is pure
recomputation with no further sampling or judging.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .consistency import CCRequest, CCSampling, check_consistency, strip_comments_and_metadata
from .leancheck import CheckRequest
from .records import Problem
from .rewards import checkable_code
from .rollout import SamplingConfig, sample_candidates

log = logging.getLogger("formaforge.evaluation")


class EvalError(ValueError):
    pass


@dataclass
class CandidateOutcome:
    sample_index: int
    sc: str  # "pass" | "fail" | "timeout" | "error"
    cc: str | None = None  # judged only on the problem's first SC passer


@dataclass
class ProblemVerdicts:
    problem_id: str
    candidates: list[CandidateOutcome]


@dataclass
class PerProblem:
    problem_id: str
    first_sc_pass_index: int | None
    cc_on_first: str | None


@dataclass
class EvalResult:
    k: int
    n_problems: int
    sc_pass_rate: float
    final_pass_rate: float
    per_problem: list[PerProblem] = field(default_factory=list)
    label: str = ""


def collect_verdicts(
    problems: list[Problem],
    k: int,
    endpoint,
    checker,
    judge,
    sampling: SamplingConfig | None = None,
    cc_sampling: CCSampling | None = None,
    sc_timeout: float = 120.0,
    parallelism: int = 8,
) -> list[ProblemVerdicts]:
    """Sample k candidates per problem and record per-candidate verdicts.
    Exactly one consistency call happens per problem with an SC passer."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    sampling = sampling or SamplingConfig()
    cc_sampling = cc_sampling or CCSampling()

    def eval_one(problem: Problem) -> ProblemVerdicts:
        try:
            _, candidates = sample_candidates(problem, k, endpoint, sampling)
        except Exception as exc:
            log.exception("sampling failed for %s: %s", problem.id, exc)
            return ProblemVerdicts(
                problem.id,
                [CandidateOutcome(i, "error") for i in range(k)],
            )
        outcomes = []
        codes: dict[int, str] = {}
        for cand in candidates:
            code = checkable_code(cand)
            if code is None:
                outcomes.append(CandidateOutcome(cand.sample_index, "fail"))
                continue
            codes[cand.sample_index] = code
            req = CheckRequest(
                candidate_id=f"{problem.id}#{cand.sample_index}",
                code=code,
                timeout=sc_timeout,
            )
            try:
                verdict = checker.check_syntax(req)
            except Exception as exc:
                log.exception("syntax check failed for %s: %s", req.candidate_id, exc)
                outcomes.append(CandidateOutcome(cand.sample_index, "error"))
                continue
            status = "error" if verdict.status == "worker_error" else verdict.status
            outcomes.append(CandidateOutcome(cand.sample_index, status))

        first = next((o for o in outcomes if o.sc == "pass"), None)
        if first is not None:
            stripped = strip_comments_and_metadata(codes[first.sample_index])
            cc = check_consistency(
                CCRequest(problem.statement, stripped, judge, cc_sampling)
            )
            first.cc = cc.verdict
        return ProblemVerdicts(problem.id, outcomes)

    if not problems:
        return []
    with ThreadPoolExecutor(max_workers=min(parallelism, len(problems))) as pool:
        return list(pool.map(eval_one, problems))


def pass_at_k_from_verdicts(
    table: list[ProblemVerdicts], k: int
) -> tuple[float, float]:
    """Pure recomputation over the first k stored candidates per problem."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    if not table:
        return 0.0, 0.0
    sc_hits = 0
    final_hits = 0
    for row in table:
        if len(row.candidates) < k:
            raise EvalError(
                f"problem {row.problem_id!r} holds {len(row.candidates)} candidates, "
                f"need >= {k}"
            )
        window = sorted(row.candidates, key=lambda o: o.sample_index)[:k]
        first = next((o for o in window if o.sc == "pass"), None)
        if first is not None:
            sc_hits += 1
            if first.cc == "true":
                final_hits += 1
    n = len(table)
    return sc_hits / n, final_hits / n


def result_from_table(
    table: list[ProblemVerdicts], k: int, label: str = ""
) -> EvalResult:
    sc_rate, final_rate = pass_at_k_from_verdicts(table, k)
    per_problem = []
    for row in table:
        window = sorted(row.candidates, key=lambda o: o.sample_index)[:k]
        first = next((o for o in window if o.sc == "pass"), None)
        per_problem.append(
            PerProblem(
                problem_id=row.problem_id,
                first_sc_pass_index=first.sample_index if first else None,
                cc_on_first=first.cc if first else None,
            )
        )
    return EvalResult(
        k=k,
        n_problems=len(table),
        sc_pass_rate=sc_rate,
        final_pass_rate=final_rate,
        per_problem=per_problem,
        label=label,
    )


def evaluate(
    problems: list[Problem],
    k: int,
    endpoint,
    checker,
    judge,
    label: str = "",
    **kwargs,
) -> EvalResult:
    table = collect_verdicts(problems, k, endpoint, checker, judge, **kwargs)
    return result_from_table(table, k, label=label)


def _fmt(rate: float) -> str:
    return f"{rate * 100:.2f}%"


def render_report(results: list[EvalResult], format: str = "markdown_table") -> str:
    """One row per (label, k); two-decimal percent columns, deterministic
    row order."""
    if not results:
        raise EvalError("render_report needs at least one result")
    rows = sorted(results, key=lambda r: (r.label, r.k))
    if format == "markdown_table":
        lines = [
            "| Run | k | SC Pass Rate | Final Pass Rate |",
            "| --- | --- | --- | --- |",
        ]
        for r in rows:
            lines.append(
                f"| {r.label or 'eval'} | {r.k} | {_fmt(r.sc_pass_rate)} | {_fmt(r.final_pass_rate)} |"
            )
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["run", "k", "sc_pass_rate", "final_pass_rate"])
        for r in rows:
            writer.writerow([r.label or "eval", r.k, _fmt(r.sc_pass_rate), _fmt(r.final_pass_rate)])
        return buf.getvalue()
    raise EvalError(f"unknown report format {format!r}")


def write_verdict_table(table: list[ProblemVerdicts], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in table:
            fh.write(
                json.dumps(
                    {
                        "problem_id": row.problem_id,
                        "candidates": [
                            {"sample_index": o.sample_index, "sc": o.sc, "cc": o.cc}
                            for o in row.candidates
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return path


def load_verdict_table(path) -> list[ProblemVerdicts]:
    table = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            table.append(
                ProblemVerdicts(
                    problem_id=obj["problem_id"],
                    candidates=[
                        CandidateOutcome(c["sample_index"], c["sc"], c.get("cc"))
                        for c in obj["candidates"]
                    ],
                )
            )
    return table
