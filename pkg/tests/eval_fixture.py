"""Hand-enumerated 10-problem evaluation fixture.

The table below is the oracle: pass positions and the judged verdict of the
first syntax passer were laid out by hand, and the expected rates for
k = 1, 8, 16 were computed from it by hand before the harness existed.

  problem  sc-pass indices     cc on first passer
  q0       0, 2                true
  q1       0                   false
  q2       (none)              -
  q3       5, 7                false   <- index 7 would be judged true, but
                                          only the first passer is judged
  q4       7                   true
  q5       10, 12              true
  q6       15                  false
  q7       0, 1, 2             true
  q8       3                   unparsed (scores as false)
  q9       8                   true

  k=1   sc 3/10   final 2/10
  k=8   sc 6/10   final 3/10
  k=16  sc 9/10   final 5/10
"""

from __future__ import annotations

from formaforge.evaluation import CandidateOutcome, ProblemVerdicts

K_VALUES = (1, 8, 16)

EXPECTED_RATES = {
    1: (0.3, 0.2),
    8: (0.6, 0.3),
    16: (0.9, 0.5),
}

# problem id -> (set of passing indices, first-passer cc verdict or None)
LAYOUT = {
    "q0": ({0, 2}, "true"),
    "q1": ({0}, "false"),
    "q2": (set(), None),
    "q3": ({5, 7}, "false"),
    "q4": ({7}, "true"),
    "q5": ({10, 12}, "true"),
    "q6": ({15}, "false"),
    "q7": ({0, 1, 2}, "true"),
    "q8": ({3}, "unparsed"),
    "q9": ({8}, "true"),
}

# For the end-to-end variant: the cc verdict the judge WOULD give per
# passing candidate.  Only the first passer's entry may ever be consumed.
WOULD_JUDGE = {
    "q0": {0: "true", 2: "false"},
    "q1": {0: "false"},
    "q3": {5: "false", 7: "true"},
    "q4": {7: "true"},
    "q5": {10: "true", 12: "false"},
    "q6": {15: "false"},
    "q7": {0: "true", 1: "false", 2: "false"},
    "q8": {3: "unparsed"},
    "q9": {8: "true"},
}


def hand_table(n_candidates: int = 16) -> list[ProblemVerdicts]:
    table = []
    for pid, (passes, first_cc) in LAYOUT.items():
        outcomes = []
        first = min(passes) if passes else None
        for idx in range(n_candidates):
            sc = "pass" if idx in passes else "fail"
            cc = first_cc if (first is not None and idx == first) else None
            outcomes.append(CandidateOutcome(sample_index=idx, sc=sc, cc=cc))
        table.append(ProblemVerdicts(problem_id=pid, candidates=outcomes))
    return table


def passing_code(pid: str, idx: int) -> str:
    return f"example : {pid}_cand{idx} = {pid}_cand{idx} := sorry"


def failing_code(pid: str, idx: int) -> str:
    return f"SCFAIL {pid}_cand{idx}"


def statement_for(pid: str) -> str:
    return f"Prove the hand-enumerated property {pid}."
