"""Markdown and CSV serialization of evaluation reports and sweeps."""

from __future__ import annotations

import csv
import io
from typing import Mapping

from .evaluation import EvalReport
from .metrics import MetricSummary

FORMATS = ("markdown", "csv")
BASELINE = "Original query"


def _num(v: float | None) -> str:
    return "-" if v is None else f"{v:.4f}"


def _pct(v: float) -> str:
    return f"{v:.2f}%"


def _maxima(values: Mapping[str, float | None]) -> set[str]:
    present = {k: v for k, v in values.items() if v is not None}
    if not present:
        return set()
    top = max(present.values())
    return {k for k, v in present.items() if v == top}


def _cells(report: EvalReport):
    """Yield (section, metric, system, column, text, best, sig) in render order.

    Both output formats are produced from this single stream.
    """
    for metric in report.metrics:
        rows = report.substitution[metric]
        base = report.baseline[metric]
        yield ("substitution", metric, BASELINE, "Min", _num(base), False, "")
        yield ("substitution", metric, BASELINE, "Max", _num(base), False, "")
        yield ("substitution", metric, BASELINE, "Avg", _num(base), False, "")
        yield ("substitution", metric, BASELINE, "Std", _num(0.0), False, "")
        cols = {
            "Min": {s: r.summary.min if r.summary else None for s, r in rows.items()},
            "Max": {s: r.summary.max if r.summary else None for s, r in rows.items()},
            "Avg": {s: r.summary.avg if r.summary else None for s, r in rows.items()},
        }
        best = {c: _maxima(v) for c, v in cols.items()}
        for s in report.systems:
            summ: MetricSummary | None = rows[s].summary
            for c in ("Min", "Max", "Avg"):
                yield ("substitution", metric, s, c, _num(cols[c][s]), s in best[c], rows[s].sig if c == "Avg" else "")
            yield ("substitution", metric, s, "Std", _num(summ.std if summ else None), s in best["Avg"], "")

    for metric in report.metrics:
        rows = report.concat[metric]
        yield ("concat", metric, BASELINE, "rank 0", _num(report.baseline[metric]), False, "")
        for i in range(1, report.k + 1):
            col = {s: rows[s].rank_means.get(i) for s in report.systems}
            top = _maxima(col)
            for s in report.systems:
                yield ("concat", metric, s, f"rank {i}", _num(col[s]), s in top, rows[s].sig.get(i, ""))

    cov = report.coverage
    cols = {
        "One suggestion": ({s: cov[s].pct_at_least_one for s in report.systems}, _pct),
        f"{_count_word(report.k)} suggestions": ({s: cov[s].pct_all_k for s in report.systems}, _pct),
        "Average": ({s: cov[s].avg_count for s in report.systems}, lambda v: f"{v:.2f}"),
    }
    for s in report.systems:
        for c, (vals, fmt) in cols.items():
            yield ("coverage", "", s, c, fmt(vals[s]), s in _maxima(vals), "")


def _count_word(k: int) -> str:
    words = ["Zero", "One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten"]
    return words[k] if k < len(words) else f"All {k}"


def _label(report: EvalReport, system: str) -> str:
    letter = report.letters.get(system)
    return f"{system} ({letter})" if letter else system


def _cell(text: str, best: bool, sig: str) -> str:
    out = f"**{text}**" if best else text
    return f"{out}<sup>{sig}</sup>" if sig else out


def render_markdown(report: EvalReport) -> str:
    cells = list(_cells(report))
    table: dict[tuple, dict[str, dict[str, str]]] = {}
    for section, metric, system, column, text, best, sig in cells:
        table.setdefault((section, metric), {}).setdefault(system, {})[column] = _cell(text, best, sig)

    out = ["# Evaluation report", ""]
    out.append(f"Queries: {report.n_queries}. Recommendations per query: {report.k}. "
               f"Reference system: {report.reference}.")
    out.append(f"Letters mark systems whose paired t-test against the reference is significant "
               f"after Holm-Bonferroni correction (alpha = {report.alpha:g}). Best values are bold.")
    out.append("")

    for metric in report.metrics:
        rows = table[("substitution", metric)]
        out += [f"## {metric}: Substitution", "", "| Model | Min | Max | Avg ± Std |", "|---|---|---|---|"]
        for system in [BASELINE, *report.systems]:
            r = rows[system]
            label = system if system == BASELINE else _label(report, system)
            out.append(f"| {label} | {r['Min']} | {r['Max']} | {r['Avg']} ± {r['Std']} |")
        out.append("")

    for metric in report.metrics:
        rows = table[("concat", metric)]
        ranks = [f"rank {i}" for i in range(1, report.k + 1)]
        out += [f"## {metric}: Concat", "", f"{BASELINE}: {rows[BASELINE]['rank 0']}", ""]
        out.append("| Model | " + " | ".join(ranks) + " |")
        out.append("|---" * (len(ranks) + 1) + "|")
        for system in report.systems:
            out.append(f"| {_label(report, system)} | " + " | ".join(rows[system][c] for c in ranks) + " |")
        out.append("")

    rows = table[("coverage", "")]
    cols = list(rows[report.systems[0]])
    out += ["## Coverage", "", "| Model | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for system in report.systems:
        out.append(f"| {system} | " + " | ".join(rows[system][c] for c in cols) + " |")
    out.append("")

    failing = {s: n for s, n in report.errors.items() if n}
    if failing:
        out += ["## Generation errors", ""]
        out += [f"- {s}: {n} of {report.n_queries} queries" for s, n in failing.items()]
        out.append("")
    return "\n".join(out)


def render_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "metric", "system", "column", "value", "best", "significance"])
    for section, metric, system, column, text, best, sig in _cells(report):
        w.writerow([section, metric, system, column, text, int(best), sig])
    return buf.getvalue()


def render_report(report: EvalReport, fmt: str = "markdown") -> bytes:
    if fmt == "markdown":
        return render_markdown(report).encode("utf-8")
    if fmt == "csv":
        return render_csv(report).encode("utf-8")
    raise ValueError(f"unknown report format: {fmt}")


def render_sweep(rows: Mapping[int, tuple[MetricSummary | None, MetricSummary | None]], fmt: str = "markdown") -> bytes:
    if fmt == "markdown":
        out = ["| Num. examples | SCS ± STD | NDCG@10 ± STD |", "|---|---|---|"]
        for size, (s, n) in rows.items():
            out.append(f"| {size} | {_pm(s)} | {_pm(n)} |")
        return ("\n".join(out) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["num_examples", "metric", "min", "max", "avg", "std"])
        for size, pair in rows.items():
            for metric, summ in zip(("SCS", "NDCG@10"), pair):
                vals = (summ.min, summ.max, summ.avg, summ.std) if summ else (None,) * 4
                w.writerow([size, metric, *(_num(v) for v in vals)])
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown report format: {fmt}")


def _pm(s: MetricSummary | None) -> str:
    return "-" if s is None else f"{_num(s.avg)} ± {_num(s.std)}"
