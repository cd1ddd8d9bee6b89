"""Clarity scoring, NDCG, summary statistics and significance testing."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from scipy import stats as _sps

from .corpus import CollectionStats, RankedList


class MetricError(ValueError):
    pass


def query_lm(tokens: Sequence[str]) -> dict[str, float]:
    """Maximum-likelihood query model: term count over query length."""
    if not tokens:
        raise MetricError("empty query")
    n = len(tokens)
    return {w: c / n for w, c in Counter(tokens).items()}


class ClarityScore(NamedTuple):
    value: float
    oov: tuple[str, ...]

    @property
    def oov_warning(self) -> bool:
        return bool(self.oov)


def clarity(query_text: str, stats: CollectionStats) -> ClarityScore:
    """Simplified clarity score of a query against the collection model.

    Terms missing from the collection are left out of the sum but still
    count toward the query length; they are reported in ``oov``.
    """
    if stats.total_tokens <= 0:
        raise MetricError("collection has no tokens")
    probs = query_lm(stats.tokenizer(query_text))
    total = 0.0
    oov = []
    for w in sorted(probs):
        pc = stats.prob(w)
        if pc == 0.0:
            oov.append(w)
            continue
        pq = probs[w]
        total += pq * math.log2(pq / pc)
    return ClarityScore(total, tuple(oov))


def scs(query_text: str, stats: CollectionStats) -> float:
    return clarity(query_text, stats).value


class Qrels:
    """Graded relevance judgments keyed by query id then doc id."""

    def __init__(self, grades: dict[str, dict[str, int]] | None = None):
        self.grades: dict[str, dict[str, int]] = {}
        for qid, docs in (grades or {}).items():
            for doc_id, g in docs.items():
                self.add(qid, doc_id, g)

    def add(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise MetricError(f"negative grade for ({query_id}, {doc_id})")
        self.grades.setdefault(query_id, {})[doc_id] = int(grade)

    def get(self, query_id: str) -> dict[str, int]:
        return self.grades.get(query_id, {})

    def __contains__(self, query_id):
        return query_id in self.grades

    def __len__(self):
        return len(self.grades)


def read_qrels(path: str | Path) -> Qrels:
    """Parse TREC qrels: ``qid iter docid grade`` per line."""
    qrels = Qrels()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise MetricError(f"{path}: malformed qrels line {lineno}")
            qid, _, doc_id, grade = parts
            try:
                qrels.add(qid, doc_id, int(grade))
            except ValueError as exc:
                raise MetricError(f"{path}: bad grade at line {lineno}: {exc}") from None
    return qrels


def write_run(runs: Iterable[RankedList], path: str | Path, tag: str = "gqr") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ranked in runs:
            for rank, (doc_id, score) in enumerate(ranked.entries, 1):
                fh.write(f"{ranked.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def read_run(path: str | Path) -> dict[str, RankedList]:
    rows: dict[str, list[tuple[int, str, float]]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise MetricError(f"{path}: malformed run line {lineno}")
            qid, _, doc_id, rank, score, _tag = parts
            rows[qid].append((int(rank), doc_id, float(score)))
    return {q: RankedList(q, [(d, s) for _, d, s in sorted(r)]) for q, r in rows.items()}


def _dcg(grades: Iterable[int]) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(grades))


def ndcg_at_k(ranked: RankedList, qrels: Qrels, k: int = 10) -> float:
    if k < 1:
        raise MetricError("k must be positive")
    judged = qrels.get(ranked.query_id)
    ideal = _dcg(sorted((g for g in judged.values() if g > 0), reverse=True)[:k])
    if ideal == 0.0:
        return 0.0
    return _dcg(judged.get(d, 0) for d in ranked.doc_ids[:k]) / ideal


@dataclass(frozen=True)
class MetricSummary:
    min: float
    max: float
    avg: float
    std: float


def summarize(values: Sequence[float]) -> MetricSummary:
    """Min, max, mean and population standard deviation."""
    if len(values) == 0:
        raise MetricError("cannot summarize an empty list")
    n = len(values)
    avg = math.fsum(values) / n
    var = math.fsum((v - avg) ** 2 for v in values) / n
    # clamp rounding drift so min <= avg <= max always holds
    avg = min(max(avg, min(values)), max(values))
    return MetricSummary(min(values), max(values), avg, math.sqrt(var))


class TTestResult(NamedTuple):
    statistic: float
    p_value: float
    df: int
    degenerate: bool = False


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on ``a - b``.

    Identical samples give p=1. A constant nonzero difference has zero
    variance; that case returns p=0 with ``degenerate`` set rather than
    raising, so evaluation sweeps keep going.
    """
    if len(a) != len(b):
        raise MetricError("paired samples must have equal length")
    n = len(a)
    if n < 2:
        raise MetricError("paired t-test needs at least two pairs")
    diffs = [x - y for x, y in zip(a, b)]
    mean = math.fsum(diffs) / n
    ss = math.fsum((d - mean) ** 2 for d in diffs)
    if ss == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n - 1, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), 0.0, n - 1, degenerate=True)
    se = math.sqrt(ss / (n - 1) / n)
    t = mean / se
    p = 2.0 * _sps.t.sf(abs(t), n - 1)
    return TTestResult(t, min(1.0, float(p)), n - 1)


@dataclass(frozen=True)
class SignificanceResult:
    pairs: list[tuple[str, float, bool]]
    alpha: float

    @property
    def rejected(self) -> list[str]:
        return [label for label, _, r in self.pairs if r]


def holm_bonferroni(pvals: Sequence[tuple[str, float]], alpha: float = 0.01) -> SignificanceResult:
    """Holm step-down correction. Output keeps the input order."""
    if not 0.0 < alpha < 1.0:
        raise MetricError("alpha must lie in (0, 1)")
    m = len(pvals)
    order = sorted(range(m), key=lambda i: (pvals[i][1], i))
    rejected = [False] * m
    for step, i in enumerate(order):
        if pvals[i][1] <= alpha / (m - step):
            rejected[i] = True
        else:
            break
    return SignificanceResult([(lab, p, rejected[i]) for i, (lab, p) in enumerate(pvals)], alpha)
