"""Document ingestion, collection statistics and BM25 retrieval."""

from __future__ import annotations

import json
import math
import re
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

INDEX_MAGIC = b"GQRIDX"
INDEX_VERSION = 1

_SPLIT = re.compile(r"[^0-9a-z]+")


class CorpusError(ValueError):
    pass


@lru_cache(maxsize=1)
def _stopwords() -> frozenset[str]:
    text = resources.files("gqr").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.split() if w.strip())


@lru_cache(maxsize=1)
def _stemmer():
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


@dataclass(frozen=True)
class Tokenizer:
    """Lowercase, split on anything that is not ``[0-9a-z]``.

    Stopword removal and Porter stemming are opt-in.
    """

    stopwords: bool = False
    stem: bool = False

    def __call__(self, text: str) -> list[str]:
        tokens = [t for t in _SPLIT.split(text.lower()) if t]
        if self.stopwords:
            stop = _stopwords()
            tokens = [t for t in tokens if t not in stop]
        if self.stem:
            stemmer = _stemmer()
            tokens = [s for s in (stemmer.stem(t) for t in tokens) if s]
        return tokens


DEFAULT_TOKENIZER = Tokenizer()


def tokenize(text: str, *, stopwords: bool = False, stem: bool = False) -> list[str]:
    return Tokenizer(stopwords, stem)(text)


@dataclass(frozen=True)
class Document:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be nonempty")


@dataclass
class CollectionStats:
    term_count: dict[str, int]
    total_tokens: int
    doc_count: int
    doc_freq: dict[str, int]
    avg_doc_len: float
    tokenizer: Tokenizer = DEFAULT_TOKENIZER

    def prob(self, term: str) -> float:
        """Collection language model p(term|C); 0.0 when the term is unseen."""
        return self.term_count.get(term, 0) / self.total_tokens


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_len: dict[str, int]
    stats: CollectionStats
    k1: float = 1.2
    b: float = 0.75
    _idf: dict[str, float] = field(default_factory=dict, repr=False, compare=False)

    @property
    def tokenizer(self) -> Tokenizer:
        return self.stats.tokenizer

    def idf(self, term: str) -> float:
        if term not in self._idf:
            n = self.stats.doc_count
            df = self.stats.doc_freq.get(term, 0)
            self._idf[term] = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        return self._idf[term]

    def with_params(self, k1: float, b: float) -> "InvertedIndex":
        """Same postings, different BM25 parameters."""
        return InvertedIndex(self.postings, self.doc_len, self.stats, k1, b)


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]]

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def __len__(self):
        return len(self.entries)


def read_corpus(path: str | Path) -> Iterator[Document]:
    """Stream documents from a JSONL file of ``{"id": ..., "text": ...}`` objects."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield Document(str(obj["id"]), str(obj.get("text", "")))
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                raise CorpusError(f"{path}: malformed document at line {lineno}: {exc}") from None


def _count(docs: Iterable[Document], tokenizer: Tokenizer):
    per_doc: dict[str, Counter] = {}
    for doc in docs:
        if doc.id in per_doc:
            raise CorpusError(f"duplicate document id: {doc.id}")
        per_doc[doc.id] = Counter(tokenizer(doc.text))
    if not per_doc:
        raise CorpusError("empty collection")
    return per_doc


def _stats_from_counts(per_doc: dict[str, Counter], tokenizer: Tokenizer) -> CollectionStats:
    term_count: Counter = Counter()
    doc_freq: Counter = Counter()
    for tf in per_doc.values():
        term_count.update(tf)
        doc_freq.update(tf.keys())
    total = sum(term_count.values())
    if total == 0:
        raise CorpusError("collection has no tokens")
    return CollectionStats(
        term_count=dict(term_count),
        total_tokens=total,
        doc_count=len(per_doc),
        doc_freq=dict(doc_freq),
        avg_doc_len=total / len(per_doc),
        tokenizer=tokenizer,
    )


def build_stats(docs: Iterable[Document], tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> CollectionStats:
    return _stats_from_counts(_count(docs, tokenizer), tokenizer)


def build_index(
    docs: Iterable[Document],
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    k1: float = 1.2,
    b: float = 0.75,
) -> InvertedIndex:
    per_doc = _count(docs, tokenizer)
    stats = _stats_from_counts(per_doc, tokenizer)
    postings: dict[str, list[tuple[str, int]]] = {}
    for doc_id in sorted(per_doc):
        for term, tf in per_doc[doc_id].items():
            postings.setdefault(term, []).append((doc_id, tf))
    doc_len = {d: sum(tf.values()) for d, tf in per_doc.items()}
    return InvertedIndex(postings, doc_len, stats, k1, b)


def bm25_search(index: InvertedIndex, query_text: str, cutoff: int = 1000, query_id: str = "") -> RankedList:
    """Rank documents for ``query_text`` with BM25.

    Repeated query terms contribute once per occurrence. Documents scoring
    zero are dropped; ties go to the smaller doc id.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be positive")
    k1, b = index.k1, index.b
    avgdl = index.stats.avg_doc_len
    scores: dict[str, float] = {}
    for term, qtf in Counter(index.tokenizer(query_text)).items():
        plist = index.postings.get(term)
        if not plist:
            continue
        w = qtf * index.idf(term)
        for doc_id, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_len[doc_id] / avgdl)
            scores[doc_id] = scores.get(doc_id, 0.0) + w * tf * (k1 + 1.0) / (tf + norm)
    ranked = sorted(((d, s) for d, s in scores.items() if s > 0.0), key=lambda e: (-e[1], e[0]))
    return RankedList(query_id, ranked[:cutoff])


# persistence: magic, u16 version, u32 payload length, zlib(canonical json)

def dumps_index(index: InvertedIndex) -> bytes:
    doc_ids = sorted(index.doc_len)
    pos = {d: i for i, d in enumerate(doc_ids)}
    payload = {
        "tokenizer": {"stopwords": index.tokenizer.stopwords, "stem": index.tokenizer.stem},
        "bm25": {"k1": index.k1, "b": index.b},
        "docs": [[d, index.doc_len[d]] for d in doc_ids],
        "postings": [[t, [[pos[d], tf] for d, tf in index.postings[t]]] for t in sorted(index.postings)],
    }
    raw = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = zlib.compress(raw, 9)
    return INDEX_MAGIC + struct.pack(">HI", INDEX_VERSION, len(body)) + body


def loads_index(data: bytes) -> InvertedIndex:
    head = len(INDEX_MAGIC) + 6
    if len(data) < head or not data.startswith(INDEX_MAGIC):
        raise CorpusError("not an index file")
    version, size = struct.unpack(">HI", data[len(INDEX_MAGIC):head])
    if version != INDEX_VERSION:
        raise CorpusError(f"unsupported index version {version}")
    payload = json.loads(zlib.decompress(data[head:head + size]))
    tok = Tokenizer(**payload["tokenizer"])
    doc_ids = [d for d, _ in payload["docs"]]
    doc_len = {d: n for d, n in payload["docs"]}
    postings = {t: [(doc_ids[i], tf) for i, tf in plist] for t, plist in payload["postings"]}
    term_count = {t: sum(tf for _, tf in plist) for t, plist in postings.items()}
    total = sum(term_count.values())
    stats = CollectionStats(
        term_count=term_count,
        total_tokens=total,
        doc_count=len(doc_ids),
        doc_freq={t: len(plist) for t, plist in postings.items()},
        avg_doc_len=total / len(doc_ids),
        tokenizer=tok,
    )
    return InvertedIndex(postings, doc_len, stats, payload["bm25"]["k1"], payload["bm25"]["b"])


def save_index(index: InvertedIndex, path: str | Path) -> None:
    Path(path).write_bytes(dumps_index(index))


def load_index(path: str | Path) -> InvertedIndex:
    return loads_index(Path(path).read_bytes())
