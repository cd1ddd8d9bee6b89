import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gqr.corpus import Document, build_index
from gqr.llm_backend import GenerationConfig, MockBackend
from gqr.metrics import Qrels
from gqr.prompting import RecommendationList, read_prompt_pool
from gqr.evaluation import (
    CONCAT,
    NDCG,
    SCS,
    SUBSTITUTION,
    EvaluationError,
    SystemRun,
    bounded_map,
    build_report,
    concat,
    coverage,
    evaluate_system,
    gqr_recommender,
    read_queries,
    read_run_cache,
    run_system,
    substitution,
    substitution_summary,
    sweep_examples,
    write_run_cache,
)
from oracles import brute_bm25, brute_ndcg, direct_scs


def recs(*items, qid="q"):
    return RecommendationList(qid, list(items))


def test_substitution_examples():
    assert substitution("q", recs("a", "b", "c"), 2) == "b"
    assert substitution("q", recs("a"), 1) == "a"
    with pytest.raises(EvaluationError, match="missing rank"):
        substitution("q", recs("a"), 2)


def test_concat_examples():
    assert concat("x", recs("a", "b"), 1) == "x a"
    assert concat("x", recs("a", "b"), 2) == "x a b"
    with pytest.raises(EvaluationError, match="missing rank"):
        concat("x", recs("a", "b"), 3)


words = st.text(alphabet="abc xyz", min_size=1, max_size=10).filter(str.strip)


@given(words, st.lists(words, min_size=2, max_size=6))
def test_concat_prefix(q, items):
    r = recs(*items)
    for i in range(1, len(items)):
        shorter, longer = concat(q, r, i), concat(q, r, i + 1)
        assert longer.startswith(shorter) and len(longer) > len(shorter)


def run_with(counts):
    return SystemRun("s", {f"q{i}": recs(*[f"r{j}" for j in range(c)], qid=f"q{i}") for i, c in enumerate(counts)})


def test_coverage_examples():
    c = coverage(run_with([6, 6, 6]), ["q0", "q1", "q2"])
    assert (c.pct_at_least_one, c.pct_all_k, c.avg_count) == (100.0, 100.0, 6.0)
    c = coverage(SystemRun("s", {}), ["q0", "q1"])
    assert (c.pct_at_least_one, c.pct_all_k, c.avg_count) == (0.0, 0.0, 0.0)
    c = coverage(run_with([6, 6, 1, 1]), ["q0", "q1", "q2", "q3"])
    assert (c.pct_at_least_one, c.pct_all_k, c.avg_count) == (100.0, 50.0, 3.5)
    with pytest.raises(EvaluationError):
        coverage(run_with([1]), [])


@given(st.lists(st.integers(0, 6), min_size=1, max_size=30))
def test_coverage_ordering(counts):
    c = coverage(run_with(counts), [f"q{i}" for i in range(len(counts))])
    assert 0 <= c.pct_all_k <= c.pct_at_least_one <= 100
    assert 0 <= c.avg_count <= 6


TOY_DOCS = [
    ("d1", "apple pie recipe with fresh apple"),
    ("d2", "banana bread and banana smoothie"),
    ("d3", "cherry tart and apple crumble"),
    ("d4", "paris travel guide hotel"),
    ("d5", "cheap hotel in rome and paris"),
    ("d6", "rome pizza museum"),
    ("d7", "weather forecast paris"),
    ("d8", "fresh bread bakery"),
]
TOY_QRELS = {
    "1": {"d1": 2, "d3": 1, "d2": 0},
    "2": {"d2": 2, "d8": 1},
    "3": {"d4": 2, "d5": 1, "d7": 1},
    "4": {"d6": 2, "d5": 1},
    "5": {"d7": 2, "d4": 0},
}
TOY_QUERIES = {"1": "apple", "2": "banana", "3": "paris hotel", "4": "rome", "5": "weather"}
TOY_RECS = {
    "1": ["apple pie", "apple crumble", "cherry tart"],
    "2": ["banana bread", "fresh bread", "bakery", "banana smoothie", "bread", "smoothie"],
    "3": ["paris travel", "cheap hotel"],
    "4": ["rome pizza", "rome museum", "pizza", "museum", "cheap rome", "rome hotel"],
    "5": [],
}


def toy():
    index = build_index(Document(*d) for d in TOY_DOCS)
    run = SystemRun("toy", {q: recs(*r, qid=q) for q, r in TOY_RECS.items()})
    return index, Qrels(TOY_QRELS), run


def oracle_ndcg(qid, text):
    ranked = brute_bm25(TOY_DOCS, text)[:10]
    grades = TOY_QRELS.get(qid, {})
    return brute_ndcg([grades.get(d, 0) for d, _ in ranked], list(grades.values()), 10)


def oracle_cell(protocol, metric, rank):
    vals = []
    for qid, q in TOY_QUERIES.items():
        r = TOY_RECS[qid]
        if protocol == SUBSTITUTION:
            if len(r) < rank:
                continue
            text = r[rank - 1]
        else:
            text = " ".join([q, *r[:rank]])
        vals.append(direct_scs(TOY_DOCS, text) if metric == SCS else oracle_ndcg(qid, text))
    return sum(vals) / len(vals)


@pytest.mark.parametrize("protocol", [SUBSTITUTION, CONCAT])
@pytest.mark.parametrize("metric", [SCS, NDCG])
def test_toy_cells_match_oracle(protocol, metric):
    index, qrels, run = toy()
    scores = evaluate_system(run, protocol, TOY_QUERIES, index, qrels, k=6)[metric]
    means = scores.rank_means()
    assert sorted(means) == list(range(1, 7))
    for i in range(1, 7):
        assert means[i] == pytest.approx(oracle_cell(protocol, metric, i), abs=1e-9)
    if protocol == SUBSTITUTION:
        summary = substitution_summary(scores)
        cells = [oracle_cell(protocol, metric, i) for i in range(1, 7)]
        assert summary.min == pytest.approx(min(cells), abs=1e-9)
        assert summary.max == pytest.approx(max(cells), abs=1e-9)
        assert summary.avg == pytest.approx(sum(cells) / 6, abs=1e-9)
        mu = sum(cells) / 6
        assert summary.std == pytest.approx(math.sqrt(sum((c - mu) ** 2 for c in cells) / 6), abs=1e-9)


def test_substitution_excludes_missing_ranks():
    index, qrels, run = toy()
    per_rank = evaluate_system(run, SUBSTITUTION, TOY_QUERIES, index, qrels)[SCS].per_rank
    assert set(per_rank[1]) == {"1", "2", "3", "4"}
    assert set(per_rank[3]) == {"1", "2", "4"}
    assert set(per_rank[6]) == {"2", "4"}
    conc = evaluate_system(run, CONCAT, TOY_QUERIES, index, qrels)[SCS].per_rank
    assert all(set(v) == set(TOY_QUERIES) for v in conc.values())


def test_substitution_rank_isolation():
    index, qrels, run = toy()
    before = evaluate_system(run, SUBSTITUTION, TOY_QUERIES, index, qrels)[SCS].per_rank[2]
    run.per_query["1"].items[0] = "paris weather"
    run.per_query["2"].items[2] = "rome"
    after = evaluate_system(run, SUBSTITUTION, TOY_QUERIES, index, qrels)[SCS].per_rank[2]
    assert before == after


def test_identity_recommendations_match_baseline():
    index, qrels, _ = toy()
    variants = lambda q: [q, q.upper(), q + "!", q.title(), f" {q} ", q + "?"]
    run = SystemRun("id", {qid: recs(*variants(q), qid=qid) for qid, q in TOY_QUERIES.items()})
    scores = evaluate_system(run, SUBSTITUTION, TOY_QUERIES, index, qrels)
    for metric, oracle in [(SCS, lambda qid, q: direct_scs(TOY_DOCS, q)), (NDCG, oracle_ndcg)]:
        for i, per_q in scores[metric].per_rank.items():
            for qid, v in per_q.items():
                assert v == pytest.approx(oracle(qid, TOY_QUERIES[qid]), abs=1e-12)


def test_empty_query_set():
    index, qrels, run = toy()
    with pytest.raises(EvaluationError):
        evaluate_system(run, SUBSTITUTION, {}, index, qrels)


def test_bounded_map_keeps_order():
    assert bounded_map(lambda x: x * x, list(range(50)), workers=8) == [x * x for x in range(50)]


def test_bounded_map_interrupt_drains():
    import threading
    import time

    done, started = [], threading.Event()

    def fn(x):
        if x == 0:
            started.set()
            time.sleep(0.05)
            done.append(x)
            return x
        started.wait()
        raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        bounded_map(fn, list(range(20)), workers=2)
    assert done == [0]


QUERIES = {f"q{i}": t for i, t in enumerate(["apple", "banana bread", "paris hotel", "rome pizza", "fresh"])}


def test_run_system_records_errors():
    def recommend(qid, text):
        if qid == "q1":
            raise RuntimeError("boom")
        return recs("x", qid=qid)

    run = run_system("s", QUERIES, recommend, workers=3)
    assert run.errors == {"q1": "boom"}
    assert set(run.per_query) == set(QUERIES) - {"q1"}
    assert run.error_rate(len(QUERIES)) == pytest.approx(0.2)


def test_sweep_errors():
    index, qrels, _ = toy()
    pool = read_prompt_pool()
    args = (QUERIES, pool, MockBackend(), GenerationConfig(), index, qrels)
    with pytest.raises(EvaluationError, match="duplicate sweep point"):
        sweep_examples([1, 2, 1], *args)
    with pytest.raises(EvaluationError, match="exceeds"):
        sweep_examples([len(pool) + 1], *args)


def test_sweep_single_equals_evaluate():
    index, qrels, _ = toy()
    pool = read_prompt_pool()
    backend = MockBackend(seed=3, mode="copy")
    cfg = GenerationConfig(n_examples=1)
    rows = sweep_examples([1], QUERIES, pool, backend, GenerationConfig(), index, qrels)
    run = run_system("direct", QUERIES, gqr_recommender(pool, cfg, backend))
    scores = evaluate_system(run, SUBSTITUTION, QUERIES, index, qrels)
    assert list(rows) == [1]
    assert rows[1] == (substitution_summary(scores[SCS]), substitution_summary(scores[NDCG]))


def test_sweep_four_points_deterministic():
    index, qrels, _ = toy()
    pool = read_prompt_pool()
    run = lambda: sweep_examples([1, 2, 5, 10], QUERIES, pool, MockBackend(seed=1), GenerationConfig(), index, qrels)
    a = run()
    assert list(a) == [1, 2, 5, 10]
    assert all(s is not None and n is not None for s, n in a.values())
    assert a == run()


def test_run_cache_round_trip(tmp_path):
    run = SystemRun("s", {"1": RecommendationList("1", ["a b", "c"]),
                          "2": RecommendationList("2", [], ("generation_failed",))})
    path = tmp_path / "run.jsonl"
    write_run_cache(run, path)
    again = read_run_cache(path, "s")
    assert {q: (r.items, r.flags) for q, r in again.per_query.items()} == \
        {q: (r.items, r.flags) for q, r in run.per_query.items()}
    (tmp_path / "bad.jsonl").write_text('{"query_id": "1", "items": []}\n{oops\n')
    with pytest.raises(EvaluationError, match="line 2"):
        read_run_cache(tmp_path / "bad.jsonl")


def test_read_queries(tmp_path):
    p = tmp_path / "q.tsv"
    p.write_text("1\tapple pie\n\n2\tbanana\n")
    assert read_queries(p) == {"1": "apple pie", "2": "banana"}
    p.write_text("1\ta\n1\tb\n")
    with pytest.raises(EvaluationError, match="duplicate"):
        read_queries(p)


def test_build_report_letters_and_baseline():
    index, qrels, good = toy()
    weak = SystemRun("weak", {q: recs("zzz", qid=q) for q in TOY_QUERIES})
    rep = build_report([good, weak], TOY_QUERIES, index, qrels, alpha=0.5)
    assert rep.reference == "toy" and rep.letters == {"weak": "a"}
    assert rep.baseline[SCS] == pytest.approx(sum(direct_scs(TOY_DOCS, q) for q in TOY_QUERIES.values()) / 5)
    assert rep.substitution[SCS]["weak"].sig == ""
    assert set(rep.coverage) == {"toy", "weak"}
    with pytest.raises(EvaluationError):
        build_report([], TOY_QUERIES, index, qrels)
    with pytest.raises(EvaluationError):
        build_report([good, good], TOY_QUERIES, index, qrels)
