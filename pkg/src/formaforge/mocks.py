"""Deterministic stand-ins for the inference endpoint, the judge, and the
Lean checker, so the whole pipeline runs offline.

A :class:`Script` maps request fingerprints to ordered canned responses.
The fingerprint is the prompt-template name (recognized by its leading
text) plus a hash of the full message list, so it is stable across runs and
platforms.  Unknown fingerprints are errors by default: silent fallbacks
would hide fixture drift.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .endpoints import Completion
from .prompts import TEMPLATE_NAMES, template_text

EXHAUSTION_POLICIES = ("error", "repeat_last")


def _template_markers() -> list[tuple[str, str]]:
    markers = []
    for name in TEMPLATE_NAMES:
        text = template_text(name)
        head = text.split("{", 1)[0]
        # First line is enough to tell the templates apart.
        markers.append((name, head.splitlines()[0]))
    return markers


_MARKERS = _template_markers()


def classify_prompt(messages: list[dict]) -> str:
    """Name the template a message list was rendered from, or 'raw'."""
    joined = "\n".join(m.get("content", "") for m in messages)
    for name, marker in _MARKERS:
        if joined.startswith(marker) or f"\n{marker}" in joined:
            return name
    return "raw"


def request_fingerprint(messages: list[dict]) -> str:
    canonical = json.dumps(
        [{"role": m.get("role", "user"), "content": m.get("content", "")} for m in messages],
        sort_keys=True,
        ensure_ascii=False,
    )
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
    return f"{classify_prompt(messages)}:{digest}"


class UnknownRequestError(KeyError):
    pass


class ScriptExhaustedError(RuntimeError):
    pass


@dataclass
class Script:
    """Immutable-after-load response script with per-fingerprint cursors."""

    entries: dict[str, list[str]] = field(default_factory=dict)
    exhaustion: str = "error"
    _cursors: dict[str, int] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, fingerprint: str, responses: list[str]) -> None:
        self.entries.setdefault(fingerprint, []).extend(responses)

    def add_messages(self, messages: list[dict], responses: list[str]) -> str:
        fp = request_fingerprint(messages)
        self.add(fp, responses)
        return fp

    def add_prompt(self, prompt: str, responses: list[str], system: str | None = None) -> str:
        messages = []
        if system is not None:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        return self.add_messages(messages, responses)

    def next_response(self, fingerprint: str) -> str:
        with self._lock:
            if fingerprint not in self.entries:
                raise UnknownRequestError(
                    f"no scripted response for request {fingerprint!r}"
                )
            responses = self.entries[fingerprint]
            cursor = self._cursors.get(fingerprint, 0)
            if cursor >= len(responses):
                if self.exhaustion == "repeat_last":
                    return responses[-1]
                raise ScriptExhaustedError(
                    f"script for {fingerprint!r} exhausted after {len(responses)} responses"
                )
            self._cursors[fingerprint] = cursor + 1
            return responses[cursor]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"exhaustion": self.exhaustion, "entries": self.entries}
        path.write_text(json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Script":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        exhaustion = payload.get("exhaustion", "error")
        if exhaustion not in EXHAUSTION_POLICIES:
            raise ValueError(f"unknown exhaustion policy {exhaustion!r}")
        return cls(entries=dict(payload.get("entries", {})), exhaustion=exhaustion)


class MockEndpoint:
    """Chat endpoint replaying a :class:`Script`.  Call order per
    fingerprint is deterministic; n-sampling consumes n entries atomically
    in script order."""

    def __init__(self, script: Script, name: str = "mock"):
        self.script = script
        self.name = name
        self.supports_n = True
        self.calls: list[str] = []
        self._call_lock = threading.Lock()

    @property
    def identity(self) -> str:
        return f"mock:{self.name}"

    def complete(
        self,
        messages: list[dict],
        n: int = 1,
        temperature: float | None = None,
        min_p: float | None = None,
        max_tokens: int | None = None,
        logprobs: bool = False,
        seed: int | None = None,
    ) -> list[Completion]:
        fp = request_fingerprint(messages)
        with self._call_lock:
            self.calls.append(fp)
        return [Completion(text=self.script.next_response(fp)) for _ in range(n)]


DECL_KEYWORDS = ("theorem", "example", "lemma")


def mock_check(code: str):
    """Rule-based syntax verdict: 'SCFAIL' marker fails, a sorry-terminated
    declaration passes, anything else fails.  Markers, not elaboration."""
    from .leancheck import SyntaxVerdict
    from .records import Diagnostic

    if "SCFAIL" in code:
        return SyntaxVerdict(
            status="fail",
            diagnostics=[Diagnostic(severity="error", text="scripted failure marker")],
        )
    has_decl = any(kw in code for kw in DECL_KEYWORDS)
    if ":= sorry" in code and has_decl:
        return SyntaxVerdict(
            status="pass",
            diagnostics=[Diagnostic(severity="warning", text="declaration uses 'sorry'")],
        )
    return SyntaxVerdict(
        status="fail",
        diagnostics=[Diagnostic(severity="error", text="no sorry-terminated declaration")],
    )


class MockChecker:
    """Drop-in for the REPL pool with a call log for gate assertions."""

    def __init__(self):
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def check_syntax(self, req):
        with self._lock:
            self.calls.append(req.code)
        return mock_check(req.code)

    def check_batch(self, reqs, parallelism: int = 1):
        return [self.check_syntax(req) for req in reqs]

    def close(self):
        pass
