"""Two-stage scalar reward: compiler syntax check gated into an LLM
consistency check.

Rewards are exactly 0.0 or 1.0, no partial credit.  Under the default
``sc_and_cc`` mode the syntax check runs first and a failure short-circuits
the (paid) consistency call; the ablation modes run exactly one of the two
checkers and never touch the other.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .consistency import CCRequest, CCSampling, check_consistency, strip_comments_and_metadata
from .leancheck import CheckRequest, strip_imports
from .records import Candidate, Diagnostic, Verdict

log = logging.getLogger("formaforge.rewards")

MODE_SC_AND_CC = "sc_and_cc"
MODE_SC_ONLY = "sc_only"
MODE_CC_ONLY = "cc_only"
REWARD_MODES = (MODE_SC_AND_CC, MODE_SC_ONLY, MODE_CC_ONLY)


@dataclass
class RewardConfig:
    mode: str = MODE_SC_AND_CC
    sc_timeout: float = 120.0
    cc_judge: str = ""  # endpoint name, recorded in manifests
    cc_sampling: CCSampling = field(default_factory=CCSampling)
    cc_parallelism: int = 16

    def __post_init__(self):
        if self.mode not in REWARD_MODES:
            raise ValueError(f"reward mode must be one of {REWARD_MODES}, got {self.mode!r}")


_NO_CODE = Diagnostic(severity="error", text="no extractable code in response")


def checkable_code(candidate: Candidate) -> str | None:
    """What actually goes to the compiler: the extracted block with leading
    import/set_option lines dropped (the injected header owns those).
    None when nothing checkable remains."""
    if candidate.extracted_code is None:
        return None
    code = strip_imports(candidate.extracted_code)
    return code if code.strip() else None


class RewardEngine:
    """Scores candidates for one reward mode.

    ``checker`` must expose check_syntax/check_batch (the REPL pool or the
    mock checker); ``judge`` is a chat endpoint.  Either may be None when
    the mode never uses it, and the engine refuses to call a missing one.
    """

    def __init__(self, cfg: RewardConfig, checker=None, judge=None):
        self.cfg = cfg
        self.checker = checker
        self.judge = judge
        if cfg.mode in (MODE_SC_AND_CC, MODE_SC_ONLY) and checker is None:
            raise ValueError(f"mode {cfg.mode} needs a syntax checker")
        if cfg.mode in (MODE_SC_AND_CC, MODE_CC_ONLY) and judge is None:
            raise ValueError(f"mode {cfg.mode} needs a judge endpoint")

    def _run_sc(self, candidate: Candidate, code: str) -> "SyntaxVerdict":
        req = CheckRequest(
            candidate_id=f"{candidate.problem_id}#{candidate.sample_index}",
            code=code,
            timeout=self.cfg.sc_timeout,
        )
        verdict = self.checker.check_syntax(req)
        if verdict.status == "worker_error":
            log.warning("worker error on %s, retrying once", req.candidate_id)
            verdict = self.checker.check_syntax(req)
        return verdict

    def _run_cc(self, code: str, statement: str) -> "CCVerdict":
        stripped = strip_comments_and_metadata(code)
        return check_consistency(
            CCRequest(
                nl_statement=statement,
                fl_statement=stripped,
                judge=self.judge,
                sampling=self.cfg.cc_sampling,
            )
        )

    def score_candidate(self, candidate: Candidate, statement: str) -> Verdict:
        code = checkable_code(candidate)
        if code is None:
            return Verdict(
                sc=None if self.cfg.mode == MODE_CC_ONLY else "fail",
                sc_diagnostics=[] if self.cfg.mode == MODE_CC_ONLY else [_NO_CODE],
                reward=0.0,
                flags=("no_code",),
            )

        if self.cfg.mode == MODE_CC_ONLY:
            cc = self._run_cc(code, statement)
            return Verdict(
                sc=None,
                cc=cc.verdict,
                cc_transcript=cc.transcript,
                reward=1.0 if cc.verdict == "true" else 0.0,
                flags=cc.flags,
            )

        sc = self._run_sc(candidate, code)
        sc_status = "error" if sc.status == "worker_error" else sc.status

        if self.cfg.mode == MODE_SC_ONLY:
            return Verdict(
                sc=sc_status,
                sc_diagnostics=sc.diagnostics,
                reward=1.0 if sc_status == "pass" else 0.0,
            )

        if sc_status != "pass":
            return Verdict(sc=sc_status, sc_diagnostics=sc.diagnostics, reward=0.0)
        cc = self._run_cc(code, statement)
        return Verdict(
            sc=sc_status,
            sc_diagnostics=sc.diagnostics,
            cc=cc.verdict,
            cc_transcript=cc.transcript,
            reward=1.0 if cc.verdict == "true" else 0.0,
            flags=cc.flags,
        )

    def score_group(
        self,
        candidates: list[Candidate],
        statement: str,
        sc_parallelism: int = 4,
    ) -> list[Verdict]:
        """Score one group.  Syntax checks run as a batch, consistency
        checks for the passers run concurrently; output order matches the
        input regardless of completion order, and one candidate's failure
        never poisons the rest."""
        if self.cfg.mode == MODE_CC_ONLY or self.cfg.mode == MODE_SC_ONLY:
            return [self._isolated(c, statement) for c in candidates]

        verdicts: list[Verdict | None] = [None] * len(candidates)
        codes: dict[int, str] = {}
        checkable = []
        for idx, cand in enumerate(candidates):
            code = checkable_code(cand)
            if code is None:
                verdicts[idx] = Verdict(sc="fail", sc_diagnostics=[_NO_CODE], reward=0.0, flags=("no_code",))
            else:
                codes[idx] = code
                checkable.append(idx)

        sc_results = {}
        if checkable:
            reqs = [
                CheckRequest(
                    candidate_id=f"{candidates[i].problem_id}#{candidates[i].sample_index}",
                    code=codes[i],
                    timeout=self.cfg.sc_timeout,
                )
                for i in checkable
            ]
            batch = self.checker.check_batch(reqs, parallelism=sc_parallelism)
            for i, verdict in zip(checkable, batch):
                if verdict.status == "worker_error":
                    verdict = self.checker.check_syntax(reqs[checkable.index(i)])
                sc_results[i] = verdict

        passers = []
        for i in checkable:
            sc = sc_results[i]
            sc_status = "error" if sc.status == "worker_error" else sc.status
            if sc_status == "pass":
                passers.append(i)
            else:
                verdicts[i] = Verdict(sc=sc_status, sc_diagnostics=sc.diagnostics, reward=0.0)

        if passers:
            def judge_one(i: int) -> tuple[int, Verdict]:
                sc = sc_results[i]
                try:
                    cc = self._run_cc(codes[i], statement)
                except Exception as exc:  # isolation: a bad candidate scores 0
                    log.exception("consistency check failed for index %d: %s", i, exc)
                    return i, Verdict(sc="pass", sc_diagnostics=sc.diagnostics, cc="unparsed", reward=0.0)
                return i, Verdict(
                    sc="pass",
                    sc_diagnostics=sc.diagnostics,
                    cc=cc.verdict,
                    cc_transcript=cc.transcript,
                    reward=1.0 if cc.verdict == "true" else 0.0,
                    flags=cc.flags,
                )

            workers = min(self.cfg.cc_parallelism, len(passers))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for i, verdict in pool.map(judge_one, passers):
                    verdicts[i] = verdict

        return [v for v in verdicts]  # type: ignore[misc]

    def _isolated(self, candidate: Candidate, statement: str) -> Verdict:
        try:
            return self.score_candidate(candidate, statement)
        except Exception as exc:
            log.exception("scoring failed for (%s, %d): %s", candidate.problem_id, candidate.sample_index, exc)
            return Verdict(
                sc="error" if self.cfg.mode != MODE_CC_ONLY else None,
                sc_diagnostics=[Diagnostic(severity="error", text=str(exc))],
                reward=0.0,
                flags=("engine_error",),
            )
