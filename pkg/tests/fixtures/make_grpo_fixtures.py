#!/usr/bin/env python3
"""Regenerate the shared clipped-surrogate fixtures.

Each fixture is a JSON object with new_logprobs, old_logprobs, advantages,
clip_epsilon, and expected_objective.  The expected value comes from a
high-precision (50-digit) reference evaluation of the objective on the
exact double inputs, so both the Python implementation and the trainer can
be held to it independently.

Run from the repo root:  python3 tests/fixtures/make_grpo_fixtures.py
"""

import json
import math
import random
from pathlib import Path

from mpmath import mp, mpf

mp.dps = 50

HERE = Path(__file__).parent / "grpo"


def reference_objective(new, old, advantages, eps):
    eps = mpf(eps)
    lo, hi = 1 - eps, 1 + eps
    seq_means = []
    for seq_new, seq_old, adv in zip(new, old, advantages):
        adv = mpf(adv)
        terms = []
        for n_lp, o_lp in zip(seq_new, seq_old):
            ratio = mp.exp(mpf(n_lp) - mpf(o_lp))
            clipped = min(max(ratio, lo), hi)
            terms.append(min(ratio * adv, clipped * adv))
        seq_means.append(sum(terms) / len(terms))
    return sum(seq_means) / len(seq_means)


def emit(name, new, old, advantages, eps):
    expected = float(reference_objective(new, old, advantages, eps))
    payload = {
        "new_logprobs": new,
        "old_logprobs": old,
        "advantages": advantages,
        "clip_epsilon": eps,
        "expected_objective": expected,
    }
    path = HERE / f"{name}.json"
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"{path}: objective {expected!r}")


def main():
    HERE.mkdir(parents=True, exist_ok=True)

    # Both sequences land on their clip bounds: min picks 1+eps on the
    # positive advantage and the sub-(1-eps) unclipped ratio loses to the
    # clipped term on the negative one.
    emit(
        "two_by_one",
        new=[[math.log(1.5)], [math.log(0.5)]],
        old=[[0.0], [0.0]],
        advantages=[1.0, -1.0],
        eps=0.2,
    )

    # ratio == 1 everywhere: objective must equal the mean advantage.
    emit(
        "identity",
        new=[[-0.5, -1.0, -2.0], [-0.25, -3.0], [-1.5, -0.75, -0.125, -2.5]],
        old=[[-0.5, -1.0, -2.0], [-0.25, -3.0], [-1.5, -0.75, -0.125, -2.5]],
        advantages=[0.5, -0.25, 1.0],
        eps=0.2,
    )

    # No learning signal at all.
    rng = random.Random(7)
    new = [[-rng.uniform(0.1, 3.0) for _ in range(5)] for _ in range(4)]
    old = [[lp + rng.uniform(-0.2, 0.2) for lp in seq] for seq in new]
    emit("zero_advantages", new=new, old=old, advantages=[0.0] * 4, eps=0.2)

    # A binary-reward group, mixed clipped and unclipped tokens.
    rng = random.Random(20240515)
    advantages = [1.0, -1.0, -1.0, 1.0]  # rewards [1,0,0,1] standardized
    new, old = [], []
    for _ in range(4):
        length = rng.randint(5, 16)
        seq_old = [-rng.uniform(0.05, 4.0) for _ in range(length)]
        seq_new = [lp + rng.uniform(-0.45, 0.45) for lp in seq_old]
        old.append(seq_old)
        new.append(seq_new)
    emit("mixed_group", new=new, old=old, advantages=advantages, eps=0.2)

    # Every token strictly inside a clip dead zone.
    emit(
        "dead_zone",
        new=[[0.5, 0.4], [-0.5, -0.6]],
        old=[[0.0, 0.0], [0.0, 0.0]],
        advantages=[2.0, -1.5],
        eps=0.2,
    )


if __name__ == "__main__":
    main()
