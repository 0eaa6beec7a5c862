"""Lean 4 REPL worker pool and syntax-check verdicts.

Each worker owns one REPL child process speaking newline-delimited JSON:
``{"cmd": <source>}`` in, a response with a ``messages`` array out.  On
startup a worker elaborates the standard header once and reuses the
resulting environment for every check, so candidates pay the Mathlib import
cost only once per worker while still elaborating in a fresh context (no
candidate ever sees another's declarations).

A statement passes iff its response carries no error-severity message;
"declaration uses 'sorry'" warnings are expected and count as a pass.  The
wall clock is the only safety net: the header sets ``maxHeartbeats 0``, so
a hung elaboration is killed at the request timeout and the worker is
recycled.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .records import Diagnostic

log = logging.getLogger("formaforge.leancheck")

LEAN_HEADER = (
    "import Mathlib\n"
    "import Aesop\n"
    "set_option maxHeartbeats 0\n"
    "open Topology\n"
    "open BigOperators\n"
    "open Nat\n"
    "open Real\n"
    "open Rat"
)

DEFAULT_TIMEOUT = 120.0

DECLARATION_KEYWORDS = (
    "theorem",
    "example",
    "lemma",
    "def",
    "abbrev",
    "instance",
    "structure",
    "class",
    "inductive",
    "noncomputable",
)


class LeanCheckError(RuntimeError):
    pass


@dataclass
class LeanConfig:
    """Where and how to run the REPL.  The project path and command come
    from config, never from hardcoded paths; the pinned toolchain
    (Lean 4 / Mathlib4 / REPL v4.15.0) is the project's responsibility."""

    command: list[str] = field(default_factory=lambda: ["lake", "env", "repl"])
    project_dir: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    pool_size: int = field(default_factory=lambda: os.cpu_count() or 1)
    reuse_header_env: bool = True
    startup_timeout: float = 600.0  # importing Mathlib is slow


@dataclass
class CheckRequest:
    candidate_id: str
    code: str
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if not self.code:
            raise LeanCheckError(f"check request {self.candidate_id!r}: code is empty")
        if self.timeout <= 0:
            raise LeanCheckError(f"check request {self.candidate_id!r}: timeout must be > 0")


@dataclass
class SyntaxVerdict:
    status: str  # "pass" | "fail" | "timeout" | "worker_error"
    diagnostics: list[Diagnostic] = field(default_factory=list)


def wrap_with_header(code: str) -> str:
    """Prepend the standard header block, a blank line, then the code
    unmodified.  No dedup: callers strip their own imports first."""
    if not code:
        raise LeanCheckError("cannot wrap empty code")
    return LEAN_HEADER + "\n\n" + code


def strip_imports(code: str) -> str:
    """Drop leading ``import``/``set_option`` lines that would collide with
    the injected header.  Only lines before the first declaration keyword
    are considered; everything else is preserved byte-for-byte."""
    lines = code.splitlines(keepends=True)
    out = []
    past_decl = False
    for line in lines:
        if not past_decl:
            word = line.lstrip().split(" ", 1)[0] if line.strip() else ""
            if word in DECLARATION_KEYWORDS or word.startswith("@["):
                past_decl = True
            elif line.startswith(("import ", "set_option ")):
                continue
        out.append(line)
    return "".join(out)


def classify_messages(messages: list[dict]) -> tuple[str, list[Diagnostic]]:
    """Turn a REPL message list into (status, diagnostics): any
    error-severity message fails the statement, warnings and infos do not."""
    diagnostics = []
    has_error = False
    for msg in messages:
        severity = msg.get("severity", "error")
        pos = msg.get("pos") or {}
        diagnostics.append(
            Diagnostic(
                severity=severity,
                text=msg.get("data", ""),
                line=pos.get("line"),
                col=pos.get("column"),
            )
        )
        if severity == "error":
            has_error = True
    return ("fail" if has_error else "pass"), diagnostics


class ReplWorker:
    """Owns one REPL child process.  Not thread-safe on its own; the pool
    guarantees exclusive ownership while a request is in flight."""

    def __init__(self, cfg: LeanConfig, worker_id: int = 0):
        self.cfg = cfg
        self.worker_id = worker_id
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._header_env: int | None = None
        self._start()

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self.cfg.command,
            cwd=self.cfg.project_dir,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc,), daemon=True).start()
        self._header_env = None
        if self.cfg.reuse_header_env:
            resp = self._roundtrip({"cmd": LEAN_HEADER}, self.cfg.startup_timeout)
            if resp is None or "env" not in resp:
                raise LeanCheckError(
                    f"worker {self.worker_id}: REPL did not accept the header command"
                )
            self._header_env = resp["env"]

    def _pump(self, proc: subprocess.Popen) -> None:
        lines_queue = self._lines
        for line in proc.stdout:
            lines_queue.put(line)
        lines_queue.put(None)  # EOF sentinel

    def _roundtrip(self, request: dict, timeout: float) -> dict | None:
        """Send one command and read one JSON response within the deadline.
        Returns None on timeout, raises LeanCheckError on crash/EOF."""
        assert self._proc is not None and self._proc.stdin is not None
        try:
            # Double newline terminates a command for the REPL; a plain
            # line-oriented server just sees one trailing blank line.
            self._proc.stdin.write(json.dumps(request, ensure_ascii=False) + "\n\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise LeanCheckError(f"worker {self.worker_id}: write failed: {exc}") from exc
        deadline = time.monotonic() + timeout
        buf = ""
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                return None
            if line is None:
                raise LeanCheckError(f"worker {self.worker_id}: REPL process exited")
            if not line.strip():
                continue
            buf += line
            try:
                return json.loads(buf)
            except json.JSONDecodeError:
                continue  # multi-line response still incomplete

    def recycle(self) -> None:
        self._kill()
        self._start()

    def _kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                pass

    def check(self, req: CheckRequest) -> SyntaxVerdict:
        if self._header_env is not None:
            request = {"cmd": req.code, "env": self._header_env}
        else:
            request = {"cmd": wrap_with_header(req.code)}
        try:
            resp = self._roundtrip(request, req.timeout)
        except LeanCheckError as exc:
            log.warning("worker %d crashed on %r: %s", self.worker_id, req.candidate_id, exc)
            self.recycle()
            return SyntaxVerdict(
                status="worker_error",
                diagnostics=[Diagnostic(severity="error", text=str(exc))],
            )
        if resp is None:
            log.warning(
                "worker %d: %r timed out after %.1fs, recycling session",
                self.worker_id,
                req.candidate_id,
                req.timeout,
            )
            self.recycle()
            return SyntaxVerdict(
                status="timeout",
                diagnostics=[
                    Diagnostic(severity="error", text=f"timed out after {req.timeout}s")
                ],
            )
        if not isinstance(resp, dict) or "messages" not in resp and "env" not in resp:
            self.recycle()
            return SyntaxVerdict(
                status="worker_error",
                diagnostics=[Diagnostic(severity="error", text=f"malformed response: {resp!r}")],
            )
        status, diagnostics = classify_messages(resp.get("messages", []))
        return SyntaxVerdict(status=status, diagnostics=diagnostics)

    def close(self) -> None:
        self._kill()


class LeanPool:
    """Shared checking service.  Submission is safe from many threads; each
    worker is owned exclusively by one request at a time, and requests past
    the pool size queue rather than fail."""

    def __init__(self, cfg: LeanConfig):
        self.cfg = cfg
        self._available: queue.Queue = queue.Queue()
        self._workers: list[ReplWorker] = []
        self._spawned = 0
        self._spawn_lock = threading.Lock()

    def _acquire(self) -> ReplWorker:
        # Spawn lazily up to pool_size, then block for a free worker.
        try:
            return self._available.get_nowait()
        except queue.Empty:
            pass
        with self._spawn_lock:
            if self._spawned < self.cfg.pool_size:
                self._spawned += 1
                worker = ReplWorker(self.cfg, worker_id=self._spawned)
                self._workers.append(worker)
                return worker
        return self._available.get()

    def _release(self, worker: ReplWorker) -> None:
        self._available.put(worker)

    def check_syntax(self, req: CheckRequest) -> SyntaxVerdict:
        worker = self._acquire()
        try:
            return worker.check(req)
        finally:
            self._release(worker)

    def check_batch(self, reqs: list[CheckRequest], parallelism: int = 1) -> list[SyntaxVerdict]:
        """Check a batch with at most ``parallelism`` requests in flight;
        verdicts come back in input order regardless of completion order.
        Failures stay per-item: one timeout never aborts the batch."""
        if parallelism < 1:
            raise LeanCheckError(f"parallelism must be >= 1, got {parallelism}")
        if not reqs:
            return []
        if parallelism == 1:
            return [self.check_syntax(req) for req in reqs]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(self.check_syntax, reqs))

    def close(self) -> None:
        for worker in self._workers:
            worker.close()
        self._workers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def pool_from_config(lean: dict) -> LeanPool:
    cfg = LeanConfig(
        command=lean.get("command", ["lake", "env", "repl"]),
        project_dir=lean.get("project_dir"),
        timeout=lean.get("timeout", DEFAULT_TIMEOUT),
        pool_size=lean.get("pool_size", os.cpu_count() or 1),
        reuse_header_env=lean.get("reuse_header_env", True),
        startup_timeout=lean.get("startup_timeout", 600.0),
    )
    return LeanPool(cfg)
