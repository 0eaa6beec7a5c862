"""Group-relative policy-gradient numerics.

Pure functions over per-sequence token log-probabilities: group-standardized
advantages, the clipped importance-ratio surrogate, its analytic gradient,
and an optional KL penalty that is disabled by default.  No optimizer and no
model live here; gradients stop at the log-probability interface.

Aggregation is token-mean followed by sequence-mean,
``(1/G) * sum_i (1/|o_i|) * sum_t term[i][t]``, never a global token mean.
Token sums use ``math.fsum`` so the objective is deterministic and exact
enough for the finite-difference checks in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GrpoError(ValueError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    """Numeric knobs of the surrogate.

    ``kl_beta`` defaults to 0.0: the simplified objective drops the KL
    regularizer.  ``std_floor`` is added to the group reward std before the
    division; the default keeps advantages exactly standardized (binary
    rewards cannot produce a near-zero nonzero std, so no blow-up is
    possible), but a small positive value such as 1e-4 can be configured for
    reward schemes with continuous values.  Note a positive floor shrinks
    the advantage std below 1, which the rollout-batch schema check rejects.
    """

    clip_epsilon: float = 0.2
    kl_beta: float = 0.0
    std_floor: float = 0.0

    def __post_init__(self):
        if self.clip_epsilon <= 0:
            raise GrpoError(f"clip_epsilon must be > 0, got {self.clip_epsilon}")
        if self.kl_beta < 0:
            raise GrpoError(f"kl_beta must be >= 0, got {self.kl_beta}")
        if self.std_floor < 0:
            raise GrpoError(f"std_floor must be >= 0, got {self.std_floor}")


@dataclass
class GroupLogprobs:
    """Token log-probabilities for one group of sampled sequences.

    ``new_logprobs[i][t]`` and ``old_logprobs[i][t]`` are the current- and
    sampling-policy log-probabilities for token t of sequence i;
    ``advantages[i]`` is the sequence-constant advantage.
    """

    new_logprobs: list[list[float]]
    old_logprobs: list[list[float]]
    advantages: list[float]

    def validate(self) -> None:
        g = len(self.new_logprobs)
        if len(self.old_logprobs) != g or len(self.advantages) != g:
            raise GrpoError(
                f"group size mismatch: {g} new sequences, "
                f"{len(self.old_logprobs)} old, {len(self.advantages)} advantages"
            )
        if g == 0:
            raise GrpoError("empty group")
        for i, (new, old) in enumerate(zip(self.new_logprobs, self.old_logprobs)):
            if len(new) != len(old):
                raise GrpoError(
                    f"sequence {i}: new has {len(new)} tokens, old has {len(old)}"
                )
            if len(new) == 0:
                raise GrpoError(f"sequence {i}: zero-length sequence")
            for lp in new:
                if not math.isfinite(lp):
                    raise GrpoError(f"sequence {i}: non-finite new logprob {lp!r}")
            for lp in old:
                if not math.isfinite(lp):
                    raise GrpoError(f"sequence {i}: non-finite old logprob {lp!r}")
        for i, adv in enumerate(self.advantages):
            if not math.isfinite(adv):
                raise GrpoError(f"sequence {i}: non-finite advantage {adv!r}")


def group_advantages(rewards: list[float], cfg: GrpoConfig = GrpoConfig()) -> list[float]:
    """Standardize rewards within a group: (r - mean) / (population std + floor).

    A degenerate group (all rewards equal, floor 0) yields exact zeros
    rather than an error: an all-pass or all-fail group simply carries no
    relative signal.
    """
    n = len(rewards)
    if n < 2:
        raise GrpoError(f"a group of {n} has no relative signal; need >= 2 rewards")
    # Explicit degeneracy check: for identical non-dyadic rewards the
    # computed mean can differ from them by an ulp, which would turn a
    # zero-signal group into +/-1 noise after the division.
    if all(r == rewards[0] for r in rewards):
        return [0.0] * n
    mean = math.fsum(rewards) / n
    var = math.fsum((r - mean) ** 2 for r in rewards) / n
    std = math.sqrt(var)
    denom = std + cfg.std_floor
    if denom == 0.0:
        return [0.0] * n
    return [(r - mean) / denom for r in rewards]


def _sequence_terms(new, old, adv, eps):
    ratio = np.exp(np.asarray(new, dtype=np.float64) - np.asarray(old, dtype=np.float64))
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return ratio, unclipped, clipped


def clipped_surrogate(lp: GroupLogprobs, cfg: GrpoConfig = GrpoConfig()) -> float:
    """Evaluate the clipped surrogate objective.

    Per token: min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv) with
    ratio = exp(new - old); token-mean per sequence, then mean over the
    group.  No KL term is added here regardless of ``kl_beta``; callers
    subtract :func:`kl_penalty` themselves when they enable it.
    """
    lp.validate()
    g = len(lp.new_logprobs)
    seq_means = []
    for new, old, adv in zip(lp.new_logprobs, lp.old_logprobs, lp.advantages):
        _, unclipped, clipped = _sequence_terms(new, old, adv, cfg.clip_epsilon)
        terms = np.minimum(unclipped, clipped)
        seq_means.append(math.fsum(terms.tolist()) / len(new))
    return math.fsum(seq_means) / g


def surrogate_gradient(
    lp: GroupLogprobs, cfg: GrpoConfig = GrpoConfig()
) -> list[list[float]]:
    """d objective / d new_logprobs, same ragged shape as the input.

    The unclipped branch contributes adv * ratio / (G * |o_i|); a strictly
    clipped token contributes 0.  Where the two branches tie (everywhere
    inside the trust band, and exactly at its edges) the unclipped branch is
    used, which is also the correct two-sided value in the band's interior.
    """
    lp.validate()
    g = len(lp.new_logprobs)
    grads: list[list[float]] = []
    for new, old, adv in zip(lp.new_logprobs, lp.old_logprobs, lp.advantages):
        ratio, unclipped, clipped = _sequence_terms(new, old, adv, cfg.clip_epsilon)
        scale = 1.0 / (g * len(new))
        grad = np.where(unclipped <= clipped, adv * ratio * scale, 0.0)
        grads.append(grad.tolist())
    return grads


def kl_penalty(
    lp: GroupLogprobs, ref_logprobs: list[list[float]], cfg: GrpoConfig
) -> float:
    """beta-scaled k3 KL estimator against a reference policy.

    Per token: exp(ref - new) - (ref - new) - 1, token-mean then
    sequence-mean.  Returns 0.0 when beta is 0 without reading the inputs'
    values; callers subtract the result from the objective.
    """
    if cfg.kl_beta == 0.0:
        return 0.0
    lp.validate()
    g = len(lp.new_logprobs)
    if len(ref_logprobs) != g:
        raise GrpoError(
            f"ref has {len(ref_logprobs)} sequences, group has {g}"
        )
    seq_means = []
    for i, (new, ref) in enumerate(zip(lp.new_logprobs, ref_logprobs)):
        if len(ref) != len(new):
            raise GrpoError(f"sequence {i}: ref has {len(ref)} tokens, new has {len(new)}")
        d = np.asarray(ref, dtype=np.float64) - np.asarray(new, dtype=np.float64)
        k3 = np.exp(d) - d - 1.0
        seq_means.append(math.fsum(k3.tolist()) / len(new))
    return cfg.kl_beta * (math.fsum(seq_means) / g)
