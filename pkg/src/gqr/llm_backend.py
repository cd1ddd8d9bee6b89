"""Text completion backends: OpenAI-compatible HTTP and deterministic mocks."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field

import httpx

log = logging.getLogger(__name__)

DEFAULT_STOP = "\n\n"
RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class BackendError(RuntimeError):
    """Non-retryable failure reported by a backend."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class BackendUnavailable(BackendError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.7
    max_tokens: int = 256
    k: int = 6
    n_examples: int = 10
    retries: int = 3
    timeout: float = 30.0
    stop: str | None = DEFAULT_STOP
    backoff: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if self.n_examples < 1:
            raise ConfigurationError("n_examples must be >= 1")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be >= 1")
        if self.retries < 0:
            raise ConfigurationError("retries must be >= 0")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    config: GenerationConfig = field(default_factory=GenerationConfig)

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be nonempty")


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    backend_id: str
    latency: float
    retries: int = 0


def stable_hash(*parts) -> str:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


_LABEL = re.compile(r"^(query|recommendations):\s?(.*)$")


class MockBackend:
    """Offline stand-in for an LLM, deterministic in (seed, prompt).

    Prompts not ending in ``recommendations:`` get an empty continuation.

    modes:
      ``hash``  -- k items ``rec-<h_i>`` with h_i = stable_hash(seed, prompt, i)
      ``flaky`` -- as ``hash`` but each item is kept with ``emit_prob``
      ``copy``  -- k items ``<target> <word>``, words drawn from the prompt's
                   example lines in hash order; mimics a model that stays on
                   the topic of its context
    """

    MODES = ("hash", "flaky", "copy")

    def __init__(self, seed: int = 0, mode: str = "hash", emit_prob: float = 0.8):
        if mode not in self.MODES:
            raise ConfigurationError(f"unknown mock mode: {mode}")
        if not 0.0 <= emit_prob <= 1.0:
            raise ConfigurationError("emit_prob must lie in [0, 1]")
        self.seed = seed
        self.mode = mode
        self.emit_prob = emit_prob

    @property
    def backend_id(self) -> str:
        return f"mock-{self.mode}:{self.seed}"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        start = time.perf_counter()
        prompt = request.prompt
        text = ""
        if prompt.endswith("recommendations:"):
            k = request.config.k
            if self.mode == "copy":
                items = self._copy_items(prompt, k)
            else:
                items = [f"rec-{stable_hash(self.seed, prompt, i)}" for i in range(1, k + 1)]
                if self.mode == "flaky":
                    items = [it for i, it in enumerate(items, 1) if self._keep(prompt, i)]
            text = " " + ", ".join(items)
        return CompletionResponse(text, self.backend_id, time.perf_counter() - start)

    def _keep(self, prompt: str, i: int) -> bool:
        u = int(stable_hash(self.seed, prompt, i, "emit"), 16) / 2.0 ** 64
        return u < self.emit_prob

    def _copy_items(self, prompt: str, k: int) -> list[str]:
        lines = prompt.split("\n")
        m = _LABEL.match(lines[-2]) if len(lines) >= 2 else None
        target = m.group(2) if m else ""
        target_words = set(target.lower().split())
        words = set()
        for line in lines[:-2]:
            m = _LABEL.match(line)
            body = m.group(2) if m else line
            for w in re.split(r"[^0-9A-Za-z]+", body.lower()):
                if w and w not in target_words:
                    words.add(w)
        ranked = sorted(words, key=lambda w: (stable_hash(self.seed, prompt, w), w))
        return [f"{target} {w}".strip() for w in ranked[:k]]


def _redact(text: str, secret: str | None) -> str:
    if secret:
        text = text.replace(secret, "***")
    return text


class HttpBackend:
    """Client for an OpenAI-compatible ``/completions`` endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._api_key = os.environ.get(api_key_env, "").strip()
        if not self._api_key:
            raise ConfigurationError(f"missing credential: set environment variable {api_key_env}")
        self._client = client or httpx.Client()
        self._sleep = sleep

    @property
    def backend_id(self) -> str:
        return f"http:{self.model}"

    def _body(self, request: CompletionRequest) -> dict:
        cfg = request.config
        body = {
            "model": self.model,
            "prompt": request.prompt,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        if cfg.stop:
            body["stop"] = [cfg.stop]
        return body

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        body = self._body(request)
        payload = post_json(
            self._client,
            f"{self.base_url}/completions",
            body,
            self._api_key,
            request.config.retries,
            request.config.timeout,
            request.config.backoff,
            self._sleep,
        )
        try:
            text = payload.json["choices"][0]["text"]
        except (KeyError, IndexError, TypeError):
            raise BackendError("malformed completion response", payload.status, payload.text[:500]) from None
        return CompletionResponse(text, self.backend_id, payload.latency, payload.retries)

    def close(self):
        self._client.close()


@dataclass
class _Reply:
    status: int
    text: str
    json: dict
    latency: float
    retries: int


def post_json(client, url, body, api_key, retries, timeout, backoff, sleep=time.sleep) -> _Reply:
    """POST with bearer auth, retrying transport errors and 408/429/5xx."""
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    log.debug("POST %s %s", url, _redact(json.dumps(body), api_key))
    start = time.perf_counter()
    last = ""
    for attempt in range(retries + 1):
        if attempt:
            sleep(backoff * 2 ** (attempt - 1))
        try:
            resp = client.post(url, json=body, headers=headers, timeout=timeout)
        except httpx.TransportError as exc:
            last = _redact(f"{type(exc).__name__}: {exc}", api_key)
            log.warning("attempt %d/%d failed: %s", attempt + 1, retries + 1, last)
            continue
        text = _redact(resp.text, api_key)
        log.debug("HTTP %d %s", resp.status_code, text[:2000])
        if resp.status_code in RETRYABLE_STATUS:
            last = f"HTTP {resp.status_code}"
            log.warning("attempt %d/%d failed: %s", attempt + 1, retries + 1, last)
            continue
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {text[:500]}", resp.status_code, text)
        try:
            data = resp.json()
        except ValueError:
            raise BackendError("response is not JSON", resp.status_code, text[:500]) from None
        return _Reply(resp.status_code, text, data, time.perf_counter() - start, attempt)
    raise BackendUnavailable(f"backend unavailable after {retries + 1} attempts ({last})")
