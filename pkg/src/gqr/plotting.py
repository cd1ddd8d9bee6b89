"""Figures for evaluation reports, written next to the tabular output."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport  # noqa: E402
from .metrics import MetricSummary  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}
FIGSIZE = (4.8, 3.0)
# strip the version string so identical data gives identical bytes
PNG_META = {"Software": None}


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text.lower()).strip("_")


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return path


def plot_concat(report: EvalReport, metric: str, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ranks = list(range(1, report.k + 1))
        for system in report.systems:
            means = report.concat[metric][system].rank_means
            ax.plot(ranks, [means.get(i, float("nan")) for i in ranks], marker="o", ms=3, label=system)
        ax.axhline(report.baseline[metric], color="0.5", ls="--", lw=0.8, label="original query")
        ax.set_xlabel("rank (recommendations concatenated)")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric}, Concat")
        ax.set_xticks(ranks)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_substitution(report: EvalReport, metric: str, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ranks = list(range(1, report.k + 1))
        for system in report.systems:
            means = report.substitution[metric][system].rank_means
            ax.plot(ranks, [means.get(i, float("nan")) for i in ranks], marker="s", ms=3, label=system)
        ax.axhline(report.baseline[metric], color="0.5", ls="--", lw=0.8, label="original query")
        ax.set_xlabel("recommendation rank")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric}, Substitution")
        ax.set_xticks(ranks)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_coverage(report: EvalReport, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        x = range(len(report.systems))
        one = [report.coverage[s].pct_at_least_one for s in report.systems]
        full = [report.coverage[s].pct_all_k for s in report.systems]
        ax.bar([i - 0.2 for i in x], one, width=0.4, label="at least one")
        ax.bar([i + 0.2 for i in x], full, width=0.4, label=f"all {report.k}")
        ax.set_xticks(list(x))
        ax.set_xticklabels(report.systems, rotation=20, ha="right")
        ax.set_ylabel("% of queries")
        ax.set_ylim(0, 105)
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)


def render_figures(report: EvalReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric in report.metrics:
        paths.append(plot_substitution(report, metric, out / f"substitution_{_slug(metric)}.png"))
        paths.append(plot_concat(report, metric, out / f"concat_{_slug(metric)}.png"))
    paths.append(plot_coverage(report, out / "coverage.png"))
    return paths


def plot_sweep(rows: Mapping[int, tuple[MetricSummary | None, MetricSummary | None]], path: str | Path) -> Path:
    sizes = list(rows)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(FIGSIZE[0] * 1.6, FIGSIZE[1]))
        for ax, j, name in ((axes[0], 0, "SCS"), (axes[1], 1, "NDCG@10")):
            avg = [rows[s][j].avg if rows[s][j] else float("nan") for s in sizes]
            std = [rows[s][j].std if rows[s][j] else 0.0 for s in sizes]
            ax.errorbar(sizes, avg, yerr=std, marker="o", ms=3, capsize=3)
            ax.set_xlabel("examples in prompt")
            ax.set_ylabel(name)
            ax.set_xticks(sizes)
        fig.tight_layout()
        return _save(fig, Path(path))
