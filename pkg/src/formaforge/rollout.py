"""Rollout orchestration: sample G candidate formalizations per problem,
extract the Lean block, score, attach group advantages, and emit the batch.

The whole formalization template goes out as a single user message (the
template has no system part).  A completion that keeps failing is padded in
as an empty candidate rather than shrinking the group: advantage math
assumes a fixed G, and an empty response is a legitimate zero-reward
outcome.
"""

from __future__ import annotations

import hashlib
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import prompts
from .endpoints import Completion, EndpointError
from .grpo import GrpoConfig, group_advantages
from .records import (
    Candidate,
    Problem,
    RolloutGroup,
    RunManifest,
    append_manifest,
    write_rollout_batch,
)
from .rewards import MODE_SC_ONLY, RewardEngine

log = logging.getLogger("formaforge.rollout")

SEED_POLICIES = ("endpoint_default", "fixed_base_seed")


@dataclass
class SamplingConfig:
    group_size: int = 4
    temperature: float = 1.0
    max_completion_tokens: int = 2048
    seed_policy: str = "endpoint_default"
    base_seed: int = 0
    request_logprobs: bool = True

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if self.seed_policy not in SEED_POLICIES:
            raise ValueError(f"seed_policy must be one of {SEED_POLICIES}")


def render_formalization_prompt(problem: Problem) -> str:
    if not problem.statement.strip():
        raise ValueError(f"problem {problem.id!r} has an empty statement")
    return prompts.render("formalize", nl_statement=problem.statement)


_FENCE_RE = re.compile(
    r"^```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\r?\n(.*?)^```[ \t]*$",
    re.MULTILINE | re.DOTALL,
)
_DECL_RE = re.compile(r"\b(theorem|example|lemma)\b")


def extract_lean_block(response: str) -> str | None:
    """First ```lean fence wins; failing that, the first anonymous fence
    containing a declaration keyword.  Blank edge lines are trimmed,
    interior bytes are preserved."""
    anonymous = None
    for match in _FENCE_RE.finditer(response):
        tag = match.group(1).lower()
        body = match.group(2).strip("\n")
        if tag == "lean":
            return body
        if tag == "" and anonymous is None and _DECL_RE.search(body):
            anonymous = body
    return anonymous


def _problem_seed(problem: Problem, cfg: SamplingConfig) -> int | None:
    if cfg.seed_policy != "fixed_base_seed":
        return None
    digest = hashlib.sha256(problem.id.encode("utf-8")).digest()
    return cfg.base_seed + int.from_bytes(digest[:4], "big")


def sample_candidates(
    problem: Problem, k: int, endpoint, cfg: SamplingConfig
) -> tuple[str, list[Candidate]]:
    """Sample k completions for one problem.  Returns the rendered prompt
    and k candidates in request order; a completion that fails even after
    the client's retries becomes an empty-response candidate."""
    prompt = render_formalization_prompt(problem)
    messages = [{"role": "user", "content": prompt}]
    seed = _problem_seed(problem, cfg)

    completions: list[Completion] = []
    if getattr(endpoint, "supports_n", False):
        try:
            completions = endpoint.complete(
                messages,
                n=k,
                temperature=cfg.temperature,
                max_tokens=cfg.max_completion_tokens,
                logprobs=cfg.request_logprobs,
                seed=seed,
            )[:k]
        except EndpointError as exc:
            log.warning("batched sampling failed for %s: %s", problem.id, exc)
    while len(completions) < k:
        try:
            completions.extend(
                endpoint.complete(
                    messages,
                    n=1,
                    temperature=cfg.temperature,
                    max_tokens=cfg.max_completion_tokens,
                    logprobs=cfg.request_logprobs,
                    seed=seed,
                )
            )
        except EndpointError as exc:
            log.warning(
                "completion %d/%d failed permanently for %s, padding empty: %s",
                len(completions) + 1, k, problem.id, exc,
            )
            completions.append(Completion(text=""))

    candidates = []
    for idx, comp in enumerate(completions[:k]):
        candidates.append(
            Candidate(
                problem_id=problem.id,
                sample_index=idx,
                raw_response=comp.text,
                extracted_code=extract_lean_block(comp.text),
                token_logprobs=comp.token_logprobs,
            )
        )
    return prompt, candidates


def sample_group(problem: Problem, cfg: SamplingConfig, endpoint) -> RolloutGroup:
    """Sample a full group with rewards/advantages left unfilled."""
    prompt, candidates = sample_candidates(problem, cfg.group_size, endpoint, cfg)
    return RolloutGroup(
        problem_id=problem.id,
        prompt=prompt,
        candidates=candidates,
        rewards=[],
        advantages=[],
    )


def run_rollout(
    problems: list[Problem],
    endpoint,
    engine: RewardEngine,
    cfg: SamplingConfig,
    grpo_cfg: GrpoConfig,
    out_path,
    manifest_path=None,
    parallelism: int = 8,
    run_id: str | None = None,
) -> tuple[list[RolloutGroup], RunManifest]:
    """Sample, score, and standardize every problem, then write the batch
    (problem input order) and append a run manifest.  Problems are isolated:
    a group that wholly fails still lands in the batch with zero rewards."""
    statements = {p.id: p.statement for p in problems}

    def roll_one(problem: Problem) -> RolloutGroup:
        group = sample_group(problem, cfg, endpoint)
        try:
            verdicts = engine.score_group(group.candidates, statements[problem.id])
            group.rewards = [v.reward for v in verdicts]
        except Exception as exc:
            log.exception("scoring group %s failed, zero rewards: %s", problem.id, exc)
            group.rewards = [0.0] * cfg.group_size
        group.advantages = group_advantages(group.rewards, grpo_cfg)
        return group

    if problems:
        with ThreadPoolExecutor(max_workers=min(parallelism, len(problems))) as pool:
            groups = list(pool.map(roll_one, problems))
    else:
        groups = []

    out_path = Path(out_path)
    write_rollout_batch(groups, out_path)

    total = sum(len(g.rewards) for g in groups)
    hits = sum(sum(g.rewards) for g in groups)
    template_hashes = {"formalize": prompts.template_hash("formalize")}
    if engine.cfg.mode != MODE_SC_ONLY:
        template_hashes["consistency"] = prompts.template_hash("consistency")
    manifest = RunManifest.new(
        config_snapshot={
            "sampling": {
                "group_size": cfg.group_size,
                "temperature": cfg.temperature,
                "max_completion_tokens": cfg.max_completion_tokens,
                "seed_policy": cfg.seed_policy,
            },
            "grpo": {
                "clip_epsilon": grpo_cfg.clip_epsilon,
                "kl_beta": grpo_cfg.kl_beta,
                "std_floor": grpo_cfg.std_floor,
            },
            "reward_mode": engine.cfg.mode,
        },
        prompt_template_hashes=template_hashes,
        endpoints={
            "sampler": getattr(endpoint, "identity", str(endpoint)),
            "judge": getattr(engine.judge, "identity", None) if engine.judge else None,
        },
        metrics={
            "problems": len(problems),
            "groups": len(groups),
            "candidates": total,
            "mean_reward": (hits / total) if total else 0.0,
        },
        run_id=run_id,
    )
    append_manifest(manifest, manifest_path or out_path.with_suffix(".manifest.jsonl"))
    return groups, manifest
