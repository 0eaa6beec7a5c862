"""Reward, rollout, evaluation, and curation machinery for Lean 4
autoformalization training signals."""

__version__ = "0.1.0"

from .grpo import GrpoConfig, GroupLogprobs, clipped_surrogate, group_advantages, surrogate_gradient
from .records import Candidate, Problem, RolloutGroup, RunManifest, Verdict

__all__ = [
    "Candidate",
    "GrpoConfig",
    "GroupLogprobs",
    "Problem",
    "RolloutGroup",
    "RunManifest",
    "Verdict",
    "clipped_surrogate",
    "group_advantages",
    "surrogate_gradient",
]
