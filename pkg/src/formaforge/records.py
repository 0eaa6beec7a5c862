"""Persisted record schemas and their JSONL load/validate/save operations.

Every stream in the pipeline is newline-delimited JSON with one record per
line.  Readers are strict: a missing required field or malformed line is an
error naming the offending line, never a silently defaulted record.
Writers validate before touching the output file, so a failed write leaves
nothing behind.
"""

from __future__ import annotations

import hashlib
import json
import math
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

PROBLEM_TYPES = ("proof", "ans")
SC_STATUSES = ("pass", "fail", "timeout", "error")
CC_VERDICTS = ("true", "false", "unparsed")

# Tolerance on the advantage-normalization invariant of a rollout group.
ADVANTAGE_TOL = 1e-9


class SchemaError(ValueError):
    """A record violated its schema or invariants."""


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing required field {key!r}")
    return obj[key]


@dataclass
class Problem:
    """One natural-language statement with a stable id."""

    id: str
    statement: str
    category: str
    problem_type: str
    source: str

    def validate(self) -> None:
        if not self.id:
            raise SchemaError("problem id must be non-empty")
        if not self.statement.strip():
            raise SchemaError(f"problem {self.id!r}: statement is empty")
        if self.problem_type not in PROBLEM_TYPES:
            raise SchemaError(
                f"problem {self.id!r}: type must be one of {PROBLEM_TYPES}, "
                f"got {self.problem_type!r}"
            )

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "problem": self.statement,
            "type": self.problem_type,
            "category": self.category,
            "source": self.source,
        }

    @classmethod
    def from_json_obj(cls, obj: dict, where: str = "problem record") -> "Problem":
        rec = cls(
            id=_require(obj, "id", where),
            statement=_require(obj, "problem", where),
            problem_type=_require(obj, "type", where),
            category=_require(obj, "category", where),
            source=_require(obj, "source", where),
        )
        rec.validate()
        return rec


def problem_id_for(statement: str, source: str) -> str:
    """Deterministic content-hash id so re-curation dedups across runs."""
    digest = hashlib.sha256()
    digest.update(statement.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(source.encode("utf-8"))
    return digest.hexdigest()[:16]


@dataclass
class Candidate:
    """One sampled model response for a problem."""

    problem_id: str
    sample_index: int
    raw_response: str
    extracted_code: str | None = None
    token_logprobs: list[float] | None = None

    def validate(self) -> None:
        if self.sample_index < 0:
            raise SchemaError("candidate sample_index must be >= 0")
        if self.extracted_code is not None and "```" in self.extracted_code:
            raise SchemaError(
                f"candidate ({self.problem_id}, {self.sample_index}): "
                "extracted_code contains markdown fence markers"
            )
        if self.token_logprobs is not None:
            for lp in self.token_logprobs:
                if lp > 0:
                    raise SchemaError(
                        f"candidate ({self.problem_id}, {self.sample_index}): "
                        f"token logprob {lp} is positive"
                    )

    def to_json_obj(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "raw_response": self.raw_response,
            "extracted_code": self.extracted_code,
            "token_logprobs": self.token_logprobs,
        }

    @classmethod
    def from_json_obj(cls, obj: dict, problem_id: str, where: str) -> "Candidate":
        rec = cls(
            problem_id=problem_id,
            sample_index=_require(obj, "sample_index", where),
            raw_response=_require(obj, "raw_response", where),
            extracted_code=obj.get("extracted_code"),
            token_logprobs=obj.get("token_logprobs"),
        )
        rec.validate()
        return rec


@dataclass
class Diagnostic:
    """One compiler (or engine) message attached to a verdict."""

    severity: str  # "error" | "warning" | "info"
    text: str
    line: int | None = None
    col: int | None = None

    def to_json_obj(self) -> dict:
        obj: dict = {"severity": self.severity, "text": self.text}
        if self.line is not None:
            obj["line"] = self.line
        if self.col is not None:
            obj["col"] = self.col
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Diagnostic":
        return cls(
            severity=obj.get("severity", "error"),
            text=obj.get("text", ""),
            line=obj.get("line"),
            col=obj.get("col"),
        )


@dataclass
class Verdict:
    """Per-candidate verification record.

    ``sc`` is None only when the reward mode never ran the syntax check
    (CC_ONLY); ``cc`` is present only when the mode required judging this
    candidate.
    """

    sc: str | None
    sc_diagnostics: list[Diagnostic] = field(default_factory=list)
    cc: str | None = None
    cc_transcript: str | None = None
    reward: float = 0.0
    flags: tuple[str, ...] = ()

    def validate(self, mode: str = "sc_and_cc") -> None:
        if self.sc is not None and self.sc not in SC_STATUSES:
            raise SchemaError(f"verdict sc must be one of {SC_STATUSES}, got {self.sc!r}")
        if self.cc is not None and self.cc not in CC_VERDICTS:
            raise SchemaError(f"verdict cc must be one of {CC_VERDICTS}, got {self.cc!r}")
        if self.reward not in (0.0, 1.0):
            raise SchemaError(f"reward must be exactly 0.0 or 1.0, got {self.reward!r}")
        if mode == "sc_and_cc" and self.reward == 1.0:
            if self.sc != "pass" or self.cc != "true":
                raise SchemaError("reward 1.0 requires sc=pass and cc=true under sc_and_cc")

    def to_json_obj(self) -> dict:
        return {
            "sc": self.sc,
            "sc_diagnostics": [d.to_json_obj() for d in self.sc_diagnostics],
            "cc": self.cc,
            "cc_transcript": self.cc_transcript,
            "reward": self.reward,
            "flags": list(self.flags),
        }

    @classmethod
    def from_json_obj(cls, obj: dict, where: str = "verdict") -> "Verdict":
        return cls(
            sc=_require(obj, "sc", where),
            sc_diagnostics=[Diagnostic.from_json_obj(d) for d in obj.get("sc_diagnostics", [])],
            cc=obj.get("cc"),
            cc_transcript=obj.get("cc_transcript"),
            reward=_require(obj, "reward", where),
            flags=tuple(obj.get("flags", ())),
        )


def _population_stats(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


@dataclass
class RolloutGroup:
    """G candidates for one problem plus rewards and normalized advantages.

    ``prompt`` is the rendered request the candidates were sampled from; the
    trainer consumes it together with the completions.
    """

    problem_id: str
    prompt: str
    candidates: list[Candidate]
    rewards: list[float]
    advantages: list[float]

    def validate(self) -> None:
        g = len(self.candidates)
        if g < 2:
            raise SchemaError(f"group {self.problem_id!r}: needs G >= 2, got {g}")
        if len(self.rewards) != g or len(self.advantages) != g:
            raise SchemaError(
                f"group {self.problem_id!r}: |candidates|={g}, |rewards|={len(self.rewards)}, "
                f"|advantages|={len(self.advantages)} must all match"
            )
        seen = set()
        for cand in self.candidates:
            cand.validate()
            if cand.problem_id != self.problem_id:
                raise SchemaError(
                    f"group {self.problem_id!r}: candidate carries problem_id "
                    f"{cand.problem_id!r}"
                )
            if cand.sample_index in seen:
                raise SchemaError(
                    f"group {self.problem_id!r}: duplicate sample_index {cand.sample_index}"
                )
            seen.add(cand.sample_index)
        if all(r == self.rewards[0] for r in self.rewards):
            if any(a != 0.0 for a in self.advantages):
                raise SchemaError(
                    f"group {self.problem_id!r}: equal rewards require all-zero advantages"
                )
        else:
            mean, std = _population_stats(self.advantages)
            if abs(mean) > ADVANTAGE_TOL or abs(std - 1.0) > ADVANTAGE_TOL:
                raise SchemaError(
                    f"group {self.problem_id!r}: advantages not normalized "
                    f"(mean={mean!r}, std={std!r})"
                )

    def to_json_obj(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "prompt": self.prompt,
            "candidates": [c.to_json_obj() for c in self.candidates],
            "rewards": self.rewards,
            "advantages": self.advantages,
        }

    @classmethod
    def from_json_obj(cls, obj: dict, where: str = "rollout group") -> "RolloutGroup":
        problem_id = _require(obj, "problem_id", where)
        rec = cls(
            problem_id=problem_id,
            prompt=_require(obj, "prompt", where),
            candidates=[
                Candidate.from_json_obj(c, problem_id, where)
                for c in _require(obj, "candidates", where)
            ],
            rewards=_require(obj, "rewards", where),
            advantages=_require(obj, "advantages", where),
        )
        rec.validate()
        return rec


@dataclass
class RunManifest:
    """Immutable record of one pipeline run.  Manifest streams are
    append-only; re-running appends a new manifest and never rewrites an
    existing line."""

    run_id: str
    created_at: str
    config_snapshot: dict
    prompt_template_hashes: dict
    endpoints: dict
    metrics: dict

    @classmethod
    def new(
        cls,
        config_snapshot: dict,
        prompt_template_hashes: dict,
        endpoints: dict,
        metrics: dict,
        run_id: str | None = None,
    ) -> "RunManifest":
        return cls(
            run_id=run_id or uuid.uuid4().hex,
            created_at=datetime.now(timezone.utc).isoformat(),
            config_snapshot=config_snapshot,
            prompt_template_hashes=prompt_template_hashes,
            endpoints=endpoints,
            metrics=metrics,
        )

    def to_json_obj(self) -> dict:
        return {
            "run_id": self.run_id,
            "created_at": self.created_at,
            "config_snapshot": self.config_snapshot,
            "prompt_template_hashes": self.prompt_template_hashes,
            "endpoints": self.endpoints,
            "metrics": self.metrics,
        }

    @classmethod
    def from_json_obj(cls, obj: dict, where: str = "manifest") -> "RunManifest":
        return cls(
            run_id=_require(obj, "run_id", where),
            created_at=_require(obj, "created_at", where),
            config_snapshot=_require(obj, "config_snapshot", where),
            prompt_template_hashes=_require(obj, "prompt_template_hashes", where),
            endpoints=_require(obj, "endpoints", where),
            metrics=_require(obj, "metrics", where),
        )


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def load_problem_file(path) -> list[Problem]:
    """Read a JSONL problem file, rejecting malformed lines and duplicate ids."""
    path = Path(path)
    problems: list[Problem] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            rec = Problem.from_json_obj(obj, where=f"{path}:{lineno}")
            if rec.id in seen:
                raise SchemaError(
                    f"{path}: duplicate problem id {rec.id!r} on lines "
                    f"{seen[rec.id]} and {lineno}"
                )
            seen[rec.id] = lineno
            problems.append(rec)
    return problems


def write_problem_file(problems: list[Problem], path) -> Path:
    path = Path(path)
    seen: set[str] = set()
    for rec in problems:
        rec.validate()
        if rec.id in seen:
            raise SchemaError(f"duplicate problem id {rec.id!r} in output set")
        seen.add(rec.id)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in problems:
            fh.write(_dump_line(rec.to_json_obj()) + "\n")
    return path


def write_rollout_batch(groups: list[RolloutGroup], path) -> Path:
    """Write one group per line.  Validation happens before the file is
    opened, so an invariant-violating group writes nothing."""
    path = Path(path)
    for group in groups:
        group.validate()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for group in groups:
            fh.write(_dump_line(group.to_json_obj()) + "\n")
    return path


def load_rollout_batch(path) -> list[RolloutGroup]:
    path = Path(path)
    groups = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            groups.append(RolloutGroup.from_json_obj(obj, where=f"{path}:{lineno}"))
    return groups


def append_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(_dump_line(manifest.to_json_obj()) + "\n")
    return path


def load_manifests(path) -> list[RunManifest]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            out.append(RunManifest.from_json_obj(json.loads(line), where=f"{path}:{lineno}"))
    return out
