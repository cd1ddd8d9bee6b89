import csv
import io
import re

import pytest

from gqr.evaluation import CONCAT, NDCG, SCS, SUBSTITUTION, EvalReport, SystemRun, build_report, evaluate_system
from gqr.metrics import holm_bonferroni, paired_ttest
from gqr.plotting import plot_sweep, render_figures
from gqr.prompting import RecommendationList
from gqr.report import render_report, render_sweep
from gqr.metrics import summarize
from test_evaluation import TOY_QUERIES, toy


def systems():
    index, qrels, good = toy()
    weak = SystemRun("weak", {q: RecommendationList(q, ["fresh", "and"]) for q in TOY_QUERIES})
    echo = SystemRun("echo", {q: RecommendationList(q, [t, t + " guide"]) for q, t in TOY_QUERIES.items()})
    return index, qrels, [good, weak, echo]


@pytest.fixture(scope="module")
def report():
    index, qrels, runs = systems()
    return build_report(runs, TOY_QUERIES, index, qrels, alpha=0.2)


def test_render_deterministic(report):
    for fmt in ("markdown", "csv"):
        assert render_report(report, fmt) == render_report(report, fmt)
    again = build_report(systems()[2], TOY_QUERIES, *systems()[:2], alpha=0.2)
    assert render_report(again) == render_report(report)


def test_unknown_format(report):
    with pytest.raises(ValueError):
        render_report(report, "html")


def test_csv_and_markdown_share_numbers(report):
    md = render_report(report, "markdown").decode()
    rows = list(csv.DictReader(io.StringIO(render_report(report, "csv").decode())))
    md_numbers = re.findall(r"\d+\.\d+%?", md[md.index("## "):])
    csv_numbers = [r["value"] for r in rows if r["value"] != "-"]
    assert sorted(set(md_numbers)) == sorted(set(csv_numbers))


def test_bold_marks_column_maxima(report):
    rows = list(csv.DictReader(io.StringIO(render_report(report, "csv").decode())))
    groups = {}
    for r in rows:
        if r["system"] != "Original query" and r["column"] != "Std" and r["value"] != "-":
            groups.setdefault((r["section"], r["metric"], r["column"]), []).append(r)
    for cells in groups.values():
        top = max(float(c["value"].rstrip("%")) for c in cells)
        for c in cells:
            assert (c["best"] == "1") == (float(c["value"].rstrip("%")) == top)


def test_significance_letters_match_holm(report):
    index, qrels, runs = systems()
    ref, others = runs[0], runs[1:]
    letters = {"weak": "a", "echo": "b"}
    assert report.letters == letters
    for m in (SCS, NDCG):
        sub = {r.system_name: evaluate_system(r, SUBSTITUTION, TOY_QUERIES, index, qrels)[m] for r in runs}
        base = sub[ref.system_name].per_query_mean()
        tests = []
        for o in others:
            cur = sub[o.system_name].per_query_mean()
            common = sorted(set(base) & set(cur))
            tests.append((o.system_name, paired_ttest([base[q] for q in common], [cur[q] for q in common]).p_value))
        want = "".join(sorted(letters[n] for n in holm_bonferroni(tests, 0.2).rejected))
        assert report.substitution[m][ref.system_name].sig == want
        conc = {r.system_name: evaluate_system(r, CONCAT, TOY_QUERIES, index, qrels)[m] for r in runs}
        for i in range(1, 7):
            b = conc[ref.system_name].per_rank[i]
            tests = [(o.system_name, paired_ttest([b[q] for q in sorted(b)],
                                                  [conc[o.system_name].per_rank[i][q] for q in sorted(b)]).p_value)
                     for o in others]
            want = "".join(sorted(letters[n] for n in holm_bonferroni(tests, 0.2).rejected))
            assert report.concat[m][ref.system_name].sig[i] == want
    md = render_report(report).decode()
    shown = set(re.findall(r"<sup>([a-z]+)</sup>", md))
    expected = {r.sig for r in report.substitution[SCS].values() if r.sig}
    assert expected <= shown


def test_letters_only_on_reference(report):
    for m in report.metrics:
        assert all(not r.sig for s, r in report.substitution[m].items() if s != report.reference)


def test_json_round_trip(report):
    again = EvalReport.from_json(report.to_json())
    assert again == report
    assert render_report(again, "csv") == render_report(report, "csv")


def test_markdown_layout(report):
    md = render_report(report).decode()
    assert "## SCS: Substitution" in md and "## NDCG@10: Concat" in md and "## Coverage" in md
    assert "| Model | Min | Max | Avg ± Std |" in md
    assert "| Model | rank 1 | rank 2 | rank 3 | rank 4 | rank 5 | rank 6 |" in md
    assert "weak (a)" in md and "echo (b)" in md


def test_figures_written(report, tmp_path):
    paths = render_figures(report, tmp_path / "fig")
    names = sorted(p.name for p in paths)
    assert names == ["concat_ndcg_10.png", "concat_scs.png", "coverage.png",
                     "substitution_ndcg_10.png", "substitution_scs.png"]
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    first = [p.read_bytes() for p in paths]
    assert [p.read_bytes() for p in render_figures(report, tmp_path / "fig")] == first


def test_sweep_rendering(tmp_path):
    rows = {1: (summarize([1.0, 2.0]), summarize([0.1, 0.3])), 5: (summarize([3.0]), None)}
    md = render_sweep(rows).decode().splitlines()
    assert md[0] == "| Num. examples | SCS ± STD | NDCG@10 ± STD |"
    assert md[2] == "| 1 | 1.5000 ± 0.5000 | 0.2000 ± 0.1000 |"
    assert md[3] == "| 5 | 3.0000 ± 0.0000 | - |"
    lines = render_sweep(rows, "csv").decode().splitlines()
    assert lines[0] == "num_examples,metric,min,max,avg,std" and len(lines) == 5
    assert plot_sweep(rows, tmp_path / "s.png").read_bytes()[:4] == b"\x89PNG"
