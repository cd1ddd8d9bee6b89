"""Substitution and Concat protocols, coverage analysis and prompt sweeps."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import InvertedIndex, bm25_search
from .metrics import MetricError, MetricSummary, Qrels, clarity, holm_bonferroni, ndcg_at_k, paired_ttest, summarize
from .prompting import PromptExample, PromptError, RecommendationList, generate

log = logging.getLogger(__name__)

SUBSTITUTION = "substitution"
CONCAT = "concat"
PROTOCOLS = (SUBSTITUTION, CONCAT)
SCS = "SCS"
NDCG = "NDCG@10"
METRICS = (SCS, NDCG)
NDCG_CUTOFF = 10
MAX_ERROR_RATE = 0.10


class EvaluationError(ValueError):
    pass


@dataclass
class SystemRun:
    system_name: str
    per_query: dict[str, RecommendationList]
    errors: dict[str, str] = field(default_factory=dict)

    def items(self, query_id: str) -> list[str]:
        recs = self.per_query.get(query_id)
        return recs.items if recs is not None else []

    def error_rate(self, n_queries: int) -> float:
        return len(self.errors) / n_queries if n_queries else 0.0


@dataclass
class ProtocolScores:
    metric: str
    protocol: str
    per_rank: dict[int, dict[str, float]]

    def rank_means(self) -> dict[int, float]:
        return {i: math.fsum(s.values()) / len(s) for i, s in self.per_rank.items() if s}

    def per_query_mean(self) -> dict[str, float]:
        """Mean over the ranks each query has a score for."""
        acc: dict[str, list[float]] = {}
        for scores in self.per_rank.values():
            for qid, v in scores.items():
                acc.setdefault(qid, []).append(v)
        return {q: math.fsum(v) / len(v) for q, v in acc.items()}


@dataclass(frozen=True)
class CoverageStats:
    pct_at_least_one: float
    pct_all_k: float
    avg_count: float


def _check_rank(recs: RecommendationList, i: int) -> None:
    if not 1 <= i <= len(recs.items):
        raise EvaluationError(f"missing rank {i}: only {len(recs.items)} recommendations")


def substitution(query: str, recs: RecommendationList, i: int) -> str:
    _check_rank(recs, i)
    return recs.items[i - 1]


def concat(query: str, recs: RecommendationList, i: int) -> str:
    _check_rank(recs, i)
    return " ".join([query, *recs.items[:i]])


def bounded_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]`` over a bounded thread pool, order kept.

    On Ctrl-C, queued work is cancelled and in-flight calls are drained
    before the interrupt propagates.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    pool = ThreadPoolExecutor(max_workers=workers)
    try:
        futures = [pool.submit(fn, x) for x in items]
        results = [f.result() for f in futures]
    except KeyboardInterrupt:
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown(wait=True)
    return results


class Scorer:
    """SCS and BM25/NDCG@10 for protocol strings, memoized per text."""

    def __init__(self, index: InvertedIndex, qrels: Qrels, cutoff: int = NDCG_CUTOFF):
        self.index = index
        self.qrels = qrels
        self.cutoff = cutoff
        self._scs: dict[str, float] = {}
        self._ndcg: dict[tuple[str, str], float] = {}
        self.oov_queries: set[str] = set()

    def scs(self, text: str) -> float:
        if text not in self._scs:
            try:
                result = clarity(text, self.index.stats)
            except MetricError:
                # no indexable tokens at all: scored like a fully OOV query
                self.oov_queries.add(text)
                self._scs[text] = 0.0
                return 0.0
            if result.oov_warning:
                self.oov_queries.add(text)
            self._scs[text] = result.value
        return self._scs[text]

    def ndcg(self, query_id: str, text: str) -> float:
        key = (query_id, text)
        if key not in self._ndcg:
            ranked = bm25_search(self.index, text, self.cutoff, query_id)
            self._ndcg[key] = ndcg_at_k(ranked, self.qrels, self.cutoff)
        return self._ndcg[key]

    def score(self, metric: str, query_id: str, text: str) -> float:
        return self.scs(text) if metric == SCS else self.ndcg(query_id, text)


def protocol_text(protocol: str, query: str, recs: RecommendationList, i: int) -> str | None:
    """Text evaluated at rank ``i``, or None when the query is excluded there.

    Substitution skips queries lacking rank ``i``; Concat falls back to the
    longest available prefix (the bare query when nothing was generated).
    """
    n = len(recs.items)
    if protocol == SUBSTITUTION:
        return substitution(query, recs, i) if i <= n else None
    if protocol == CONCAT:
        return concat(query, recs, min(i, n)) if n else query
    raise EvaluationError(f"unknown protocol: {protocol}")


def evaluate_system(
    run: SystemRun,
    protocol: str,
    queries: Mapping[str, str],
    index: InvertedIndex,
    qrels: Qrels,
    k: int = 6,
    metrics: Sequence[str] = METRICS,
    workers: int = 1,
    scorer: Scorer | None = None,
) -> dict[str, ProtocolScores]:
    if not queries:
        raise EvaluationError("empty query set")
    scorer = scorer or Scorer(index, qrels)
    qids = list(queries)

    def per_query(qid):
        recs = run.per_query.get(qid) or RecommendationList(qid, [])
        out = {}
        for i in range(1, k + 1):
            text = protocol_text(protocol, queries[qid], recs, i)
            if text is not None:
                out[i] = {m: scorer.score(m, qid, text) for m in metrics}
        return out

    rows = bounded_map(per_query, qids, workers)
    result = {}
    for m in metrics:
        per_rank = {i: {} for i in range(1, k + 1)}
        for qid, row in zip(qids, rows):
            for i, vals in row.items():
                per_rank[i][qid] = vals[m]
        result[m] = ProtocolScores(m, protocol, per_rank)
    return result


def baseline_scores(queries: Mapping[str, str], scorer: Scorer, metrics: Sequence[str] = METRICS) -> dict[str, dict[str, float]]:
    return {m: {qid: scorer.score(m, qid, q) for qid, q in queries.items()} for m in metrics}


def coverage(run: SystemRun, query_ids: Iterable[str], k: int = 6) -> CoverageStats:
    counts = [min(len(run.items(q)), k) for q in query_ids]
    if not counts:
        raise EvaluationError("empty query set")
    n = len(counts)
    return CoverageStats(
        100.0 * sum(c >= 1 for c in counts) / n,
        100.0 * sum(c >= k for c in counts) / n,
        sum(counts) / n,
    )


def substitution_summary(scores: ProtocolScores) -> MetricSummary | None:
    means = scores.rank_means()
    return summarize([means[i] for i in sorted(means)]) if means else None


def static_examples(pool: Sequence[PromptExample], target: str, n: int) -> list[PromptExample]:
    """First ``n`` pool examples whose query differs from ``target``."""
    folded = target.strip().casefold()
    return [e for e in pool if e.query.strip().casefold() != folded][:n]


def run_system(name: str, queries: Mapping[str, str], recommend: Callable[[str, str], RecommendationList],
               workers: int = 1) -> SystemRun:
    """Generate recommendations for every query; backend failures are recorded, not raised."""

    def one(qid):
        try:
            return qid, recommend(qid, queries[qid]), None
        except (PromptError, ValueError, RuntimeError) as exc:
            log.warning("%s failed on %s: %s", name, qid, exc)
            return qid, None, str(exc)

    run = SystemRun(name, {})
    for qid, recs, err in bounded_map(one, list(queries), workers):
        if err is not None:
            run.errors[qid] = err
        else:
            run.per_query[qid] = recs
    return run


def gqr_recommender(pool: Sequence[PromptExample], config, backend) -> Callable[[str, str], RecommendationList]:
    def recommend(qid, text):
        return generate(text, static_examples(pool, text, config.n_examples), config, backend, qid)

    return recommend


def sweep_examples(
    sizes: Sequence[int],
    queries: Mapping[str, str],
    pool: Sequence[PromptExample],
    backend,
    config,
    index: InvertedIndex,
    qrels: Qrels,
    workers: int = 1,
) -> dict[int, tuple[MetricSummary | None, MetricSummary | None]]:
    """Substitution SCS/NDCG summaries for each prompt size."""
    if not sizes:
        raise EvaluationError("no sweep sizes given")
    if len(set(sizes)) != len(sizes):
        raise EvaluationError("duplicate sweep point")
    for s in sizes:
        if s < 1 or s > len(pool):
            raise EvaluationError(f"sweep size {s} exceeds example pool of {len(pool)}")
    scorer = Scorer(index, qrels)
    out = {}
    for s in sizes:
        cfg = replace(config, n_examples=s)
        run = run_system(f"n={s}", queries, gqr_recommender(pool, cfg, backend), workers)
        scores = evaluate_system(run, SUBSTITUTION, queries, index, qrels, cfg.k, workers=workers, scorer=scorer)
        out[s] = (substitution_summary(scores[SCS]), substitution_summary(scores[NDCG]))
    return out


# -- report assembly --------------------------------------------------------

@dataclass
class SubstitutionRow:
    summary: MetricSummary | None
    rank_means: dict[int, float]
    sig: str = ""


@dataclass
class ConcatRow:
    rank_means: dict[int, float]
    sig: dict[int, str] = field(default_factory=dict)


@dataclass
class EvalReport:
    systems: list[str]
    reference: str
    k: int
    alpha: float
    metrics: list[str]
    letters: dict[str, str]
    baseline: dict[str, float]
    substitution: dict[str, dict[str, SubstitutionRow]]
    concat: dict[str, dict[str, ConcatRow]]
    coverage: dict[str, CoverageStats]
    errors: dict[str, int] = field(default_factory=dict)
    n_queries: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)

        def ranks(m):
            return {int(i): v for i, v in m.items()}

        def summ(s):
            return MetricSummary(**s) if s else None

        return cls(
            systems=d["systems"],
            reference=d["reference"],
            k=d["k"],
            alpha=d["alpha"],
            metrics=d["metrics"],
            letters=d["letters"],
            baseline=d["baseline"],
            substitution={m: {s: SubstitutionRow(summ(r["summary"]), ranks(r["rank_means"]), r["sig"])
                              for s, r in rows.items()} for m, rows in d["substitution"].items()},
            concat={m: {s: ConcatRow(ranks(r["rank_means"]), ranks(r["sig"]))
                        for s, r in rows.items()} for m, rows in d["concat"].items()},
            coverage={s: CoverageStats(**c) for s, c in d["coverage"].items()},
            errors=d.get("errors", {}),
            n_queries=d.get("n_queries", 0),
        )


def _letters(systems: Sequence[str], reference: str) -> dict[str, str]:
    others = [s for s in systems if s != reference]
    return {s: chr(ord("a") + i) for i, s in enumerate(others)}


def significance(reference: Mapping[str, float], competitors: Mapping[str, Mapping[str, float]],
                 letters: Mapping[str, str], alpha: float) -> str:
    """Letters of competitors whose paired difference from the reference survives Holm at ``alpha``."""
    tests = []
    for name, scores in competitors.items():
        common = sorted(set(reference) & set(scores))
        if len(common) < 2:
            p = 1.0
        else:
            p = paired_ttest([reference[q] for q in common], [scores[q] for q in common]).p_value
        tests.append((name, p))
    if not tests:
        return ""
    result = holm_bonferroni(tests, alpha)
    return "".join(sorted(letters[name] for name in result.rejected))


def build_report(
    runs: Sequence[SystemRun],
    queries: Mapping[str, str],
    index: InvertedIndex,
    qrels: Qrels,
    k: int = 6,
    alpha: float = 0.01,
    reference: str | None = None,
    metrics: Sequence[str] = METRICS,
    workers: int = 1,
) -> EvalReport:
    if not runs:
        raise EvaluationError("no systems to evaluate")
    if not queries:
        raise EvaluationError("empty query set")
    names = [r.system_name for r in runs]
    if len(set(names)) != len(names):
        raise EvaluationError("duplicate system name")
    reference = reference or names[0]
    if reference not in names:
        raise EvaluationError(f"unknown reference system: {reference}")
    letters = _letters(names, reference)
    scorer = Scorer(index, qrels)
    base = baseline_scores(queries, scorer, metrics)

    scores = {
        (r.system_name, p): evaluate_system(r, p, queries, index, qrels, k, metrics, workers, scorer)
        for r in runs for p in PROTOCOLS
    }
    subst: dict[str, dict[str, SubstitutionRow]] = {}
    conc: dict[str, dict[str, ConcatRow]] = {}
    for m in metrics:
        subst[m] = {}
        conc[m] = {}
        for name in names:
            s = scores[(name, SUBSTITUTION)][m]
            c = scores[(name, CONCAT)][m]
            subst[m][name] = SubstitutionRow(substitution_summary(s), s.rank_means())
            conc[m][name] = ConcatRow(c.rank_means())

        ref_sub = scores[(reference, SUBSTITUTION)][m].per_query_mean()
        others_sub = {n: scores[(n, SUBSTITUTION)][m].per_query_mean() for n in names if n != reference}
        subst[m][reference].sig = significance(ref_sub, others_sub, letters, alpha)
        for i in range(1, k + 1):
            ref_c = scores[(reference, CONCAT)][m].per_rank[i]
            others_c = {n: scores[(n, CONCAT)][m].per_rank[i] for n in names if n != reference}
            conc[m][reference].sig[i] = significance(ref_c, others_c, letters, alpha)

    baseline = {m: math.fsum(v.values()) / len(v) for m, v in base.items()}
    return EvalReport(
        systems=names,
        reference=reference,
        k=k,
        alpha=alpha,
        metrics=list(metrics),
        letters=letters,
        baseline=baseline,
        substitution=subst,
        concat=conc,
        coverage={r.system_name: coverage(r, queries, k) for r in runs},
        errors={r.system_name: len(r.errors) for r in runs},
        n_queries=len(queries),
    )


# -- file formats -------------------------------------------------------------

def read_queries(path: str | Path) -> dict[str, str]:
    """Topics as ``qid<TAB>query`` lines."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            qid, tab, text = line.partition("\t")
            qid = qid.strip()
            if not tab or not qid or not text.strip():
                raise EvaluationError(f"{path}: malformed query line {lineno}")
            if qid in out:
                raise EvaluationError(f"{path}: duplicate query id {qid} at line {lineno}")
            out[qid] = text.strip()
    return out


def write_run_cache(run: SystemRun, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, recs in run.per_query.items():
            rec = {"query_id": qid, "items": list(recs.items)}
            if recs.flags:
                rec["flags"] = list(recs.flags)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_run_cache(path: str | Path, name: str | None = None) -> SystemRun:
    run = SystemRun(name or Path(path).stem, {})
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                qid = str(obj["query_id"])
                items = [str(x) for x in obj["items"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"{path}: malformed run record at line {lineno}: {exc}") from None
            run.per_query[qid] = RecommendationList(qid, items, tuple(obj.get("flags", ())))
    return run
