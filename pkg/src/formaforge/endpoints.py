"""Chat-completions endpoint clients and pipeline configuration.

All LLM traffic (sampler, judge, extractor, validator, perturbation
generator) goes through the same wire convention: a messages array in, a
choices array out, with optional per-token logprobs.  Endpoints are declared
in a YAML config by name and resolved with :func:`build_endpoint`; the
``mock`` kind replays scripted responses for offline runs and tests.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import yaml

log = logging.getLogger("formaforge.endpoints")

DEFAULT_MAX_IN_FLIGHT = 16
DEFAULT_MAX_ATTEMPTS = 3
RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class EndpointError(RuntimeError):
    """Transport or protocol failure after the retry budget."""


@dataclass
class Completion:
    text: str
    token_logprobs: list[float] | None = None


@dataclass
class EndpointSpec:
    name: str
    kind: str = "openai"  # "openai" | "mock"
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""
    script: str | None = None  # mock kind: path to the response script

    @classmethod
    def from_obj(cls, obj: dict) -> "EndpointSpec":
        if "name" not in obj:
            raise ValueError("endpoint declaration missing 'name'")
        return cls(
            name=obj["name"],
            kind=obj.get("kind", "openai"),
            base_url=obj.get("base_url", ""),
            model=obj.get("model", ""),
            api_key_env=obj.get("api_key_env", ""),
            script=obj.get("script"),
        )


class OpenAIChatEndpoint:
    """Blocking chat-completions client with bounded retries and an
    in-flight cap shared by all callers of this endpoint."""

    def __init__(
        self,
        spec: EndpointSpec,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        timeout: float = 120.0,
    ):
        self.spec = spec
        self.supports_n = True
        self._sem = threading.Semaphore(max_in_flight)
        self._max_attempts = max_attempts
        self._backoff = backoff
        headers = {}
        api_key = os.environ.get(spec.api_key_env, "") if spec.api_key_env else ""
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=spec.base_url.rstrip("/"),
            headers=headers,
            timeout=timeout,
            transport=transport,
        )

    @property
    def identity(self) -> str:
        return f"{self.spec.model}@{self.spec.base_url}"

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
        payload: dict = {"model": self.spec.model, "messages": messages, "n": n}
        if temperature is not None:
            payload["temperature"] = temperature
        if min_p is not None:
            payload["min_p"] = min_p  # vLLM-style extension
        if max_tokens is not None:
            payload["max_tokens"] = max_tokens
        if logprobs:
            payload["logprobs"] = True
        if seed is not None:
            payload["seed"] = seed

        last_error: Exception | None = None
        for attempt in range(self._max_attempts):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                with self._sem:
                    resp = self._client.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                log.warning("%s: transport error (attempt %d): %s", self.identity, attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = EndpointError(f"HTTP {resp.status_code}")
                log.warning("%s: HTTP %d (attempt %d)", self.identity, resp.status_code, attempt + 1)
                continue
            if resp.status_code != 200:
                raise EndpointError(f"{self.identity}: HTTP {resp.status_code}: {resp.text[:500]}")
            return self._parse(resp.json(), n)
        raise EndpointError(f"{self.identity}: gave up after {self._max_attempts} attempts: {last_error}")

    def _parse(self, body: dict, n: int) -> list[Completion]:
        try:
            choices = body["choices"]
        except (KeyError, TypeError) as exc:
            raise EndpointError(f"{self.identity}: malformed response: {body!r:.300}") from exc
        out = []
        for choice in choices:
            text = (choice.get("message") or {}).get("content") or ""
            token_logprobs = None
            lp = choice.get("logprobs")
            if lp and lp.get("content"):
                token_logprobs = [entry["logprob"] for entry in lp["content"]]
            out.append(Completion(text=text, token_logprobs=token_logprobs))
        if len(out) < n:
            raise EndpointError(f"{self.identity}: asked for {n} choices, got {len(out)}")
        return out

    def close(self):
        self._client.close()


@dataclass
class PipelineConfig:
    """Everything a CLI invocation needs: named endpoints plus checker setup."""

    endpoints: dict[str, EndpointSpec] = field(default_factory=dict)
    checker: str = "mock"  # "mock" | "repl"
    lean: dict = field(default_factory=dict)
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT

    def endpoint_spec(self, name: str) -> EndpointSpec:
        try:
            return self.endpoints[name]
        except KeyError:
            raise KeyError(
                f"endpoint {name!r} not declared in config "
                f"(have: {sorted(self.endpoints)})"
            ) from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    endpoints = {}
    for obj in raw.get("endpoints", []):
        spec = EndpointSpec.from_obj(obj)
        endpoints[spec.name] = spec
    lean = raw.get("lean", {}) or {}
    return PipelineConfig(
        endpoints=endpoints,
        checker=raw.get("checker", "mock"),
        lean=lean,
        max_in_flight=raw.get("max_in_flight", DEFAULT_MAX_IN_FLIGHT),
    )


def build_endpoint(spec: EndpointSpec, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT):
    if spec.kind == "openai":
        return OpenAIChatEndpoint(spec, max_in_flight=max_in_flight)
    if spec.kind == "mock":
        from .mocks import MockEndpoint, Script

        if not spec.script:
            raise ValueError(f"mock endpoint {spec.name!r} needs a 'script' path")
        return MockEndpoint(Script.load(spec.script), name=spec.name)
    raise ValueError(f"unknown endpoint kind {spec.kind!r}")
