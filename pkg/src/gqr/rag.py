"""Retrieval-augmented prompting from a session query log."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import httpx
import numpy as np

from .llm_backend import ConfigurationError, GenerationConfig, post_json
from .prompting import MAX_EXAMPLE_RECS, SEPARATOR, PromptExample, RecommendationList, generate

MAX_FOLLOWUPS = 6


class LogError(ValueError):
    pass


class CoverageError(ValueError):
    pass


@dataclass
class SessionLog:
    session_ids: list[str]
    sessions: list[list[str]]

    def __len__(self):
        return len(self.sessions)

    def session(self, session_id: str) -> list[str]:
        if getattr(self, "_by_id", None) is None:
            self._by_id = dict(zip(self.session_ids, self.sessions))
        return self._by_id[session_id]


def ingest_log(lines: Iterable[str]) -> SessionLog:
    """Group ``session_id<TAB>query`` lines by session, keeping first-seen order."""
    order: list[str] = []
    grouped: dict[str, list[str]] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        sid, tab, query = line.partition("\t")
        sid, query = sid.strip(), query.strip()
        if not tab or not sid or not query:
            raise LogError(f"malformed session log line {lineno}: expected 'session_id<TAB>query'")
        if sid not in grouped:
            order.append(sid)
            grouped[sid] = []
        grouped[sid].append(query)
    return SessionLog(order, [grouped[s] for s in order])


def read_log(path) -> SessionLog:
    with open(path, encoding="utf-8") as fh:
        return ingest_log(fh)


def _normalize(v: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite values")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("embedding has zero norm")
    return v / norm


class HashingEmbedder:
    """Feature-hashed character trigrams, L2-normalized. Fully offline."""

    def __init__(self, dims: int = 256):
        self.dims = dims

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("empty text")
        padded = f" {' '.join(text.lower().split())} "
        v = np.zeros(self.dims)
        for i in range(len(padded) - 2):
            h = hashlib.blake2b(padded[i:i + 3].encode("utf-8"), digest_size=8).digest()
            v[int.from_bytes(h, "big") % self.dims] += 1.0
        return _normalize(v)


class HttpEmbedder:
    """OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "OPENAI_API_KEY",
                 client: httpx.Client | None = None, retries: int = 3, timeout: float = 30.0):
        self._api_key = os.environ.get(api_key_env, "").strip()
        if not self._api_key:
            raise ConfigurationError(f"missing credential: set environment variable {api_key_env}")
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.retries = retries
        self.timeout = timeout
        self._client = client or httpx.Client()

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("empty text")
        reply = post_json(self._client, self.url, {"model": self.model, "input": text},
                          self._api_key, self.retries, self.timeout, 0.5)
        try:
            values = reply.json["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError):
            raise ValueError("malformed embedding response") from None
        return _normalize(np.asarray(values, dtype=float))


def embed(text: str, provider) -> np.ndarray:
    return provider.embed(text)


class EmbeddingIndex:
    """Exact cosine search over unit vectors; one entry per distinct query."""

    def __init__(self, queries: Sequence[str], session_ids: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or len(vectors) != len(queries) or len(queries) != len(session_ids):
            raise ValueError("queries, session ids and vectors must align")
        self.queries = list(queries)
        self.session_ids = list(session_ids)
        self.vectors = vectors
        self.dims = vectors.shape[1]

    def __len__(self):
        return len(self.queries)

    @classmethod
    def from_log(cls, log: SessionLog, provider) -> "EmbeddingIndex":
        queries, sids, vecs, seen = [], [], [], set()
        for sid, session in zip(log.session_ids, log.sessions):
            for q in session:
                if q in seen:
                    continue
                seen.add(q)
                queries.append(q)
                sids.append(sid)
                vecs.append(provider.embed(q))
        if not vecs:
            raise CoverageError("insufficient log coverage: session log is empty")
        return cls(queries, sids, np.vstack(vecs))

    def ranking(self, probe: np.ndarray) -> list[tuple[str, str, float]]:
        probe = np.asarray(probe, dtype=float)
        if probe.shape != (self.dims,):
            raise ValueError(f"dimension mismatch: index has {self.dims}, probe has {probe.shape}")
        sims = np.clip(self.vectors @ probe, -1.0, 1.0)
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], self.queries[i]))
        return [(self.queries[i], self.session_ids[i], float(sims[i])) for i in order]


def knn(index: EmbeddingIndex, probe: np.ndarray, n: int) -> list[tuple[str, str, float]]:
    """Top-``n`` entries by cosine, ties broken by query string."""
    if len(index) == 0:
        raise ValueError("empty index")
    if n < 1:
        raise ValueError("n must be positive")
    return index.ranking(probe)[:n]


def followups(log: SessionLog, session_id: str, query: str, limit: int = MAX_FOLLOWUPS) -> list[str]:
    """Queries issued after the first occurrence of ``query`` in its session.

    Items that cannot be serialized in a prompt (containing the list
    separator) and case-insensitive repeats are dropped.
    """
    session = log.session(session_id)
    after = session[session.index(query) + 1:]
    seen = {query.casefold()}
    out = []
    for q in after:
        if SEPARATOR in q or q.casefold() in seen:
            continue
        seen.add(q.casefold())
        out.append(q)
        if len(out) == min(limit, MAX_EXAMPLE_RECS):
            break
    return out


def compose_dynamic_examples(target: str, log: SessionLog, index: EmbeddingIndex, n: int, provider) -> list[PromptExample]:
    if n < 1:
        raise ValueError("n must be positive")
    folded = target.strip().casefold()
    used = {folded}
    examples = []
    for query, sid, _ in index.ranking(provider.embed(target)):
        key = query.casefold()
        if key in used or SEPARATOR in query:
            continue
        recs = followups(log, sid, query)
        if not recs:
            continue
        used.add(key)
        examples.append(PromptExample(query, tuple(recs)))
        if len(examples) == n:
            break
    if not examples:
        raise CoverageError(
            "insufficient log coverage: no logged query similar to the target has follow-up queries in its session"
        )
    return examples


def ra_generate(target: str, log: SessionLog, index: EmbeddingIndex, config: GenerationConfig,
                backend, provider, n: int | None = None, query_id: str = "") -> RecommendationList:
    examples = compose_dynamic_examples(target, log, index, n or config.n_examples, provider)
    recs = generate(target, examples, config, backend, query_id)
    recs.examples = examples
    return recs
