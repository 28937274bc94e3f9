"""Static vector plots rendered from the persisted result tables.

Plots are regenerable from a run directory without recomputing anything:
every figure reads the CSV files written next to it. SVG output is made
byte-deterministic (fixed hash salt, no embedded date) so reruns compare
equal.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .runio import dataset_dirname, parse_cell, read_csv

__all__ = ["render_study_plots"]

SVG_SETTINGS = {"svg.hashsalt": "defectbench"}
_NO_DATE = {"Date": None}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=_NO_DATE)
    plt.close(fig)


def _boxplot_by_group(groups: list[tuple[str, list[float]]], ylabel: str, title: str,
                      hline: float | None = 1.0):
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(groups) + 2.0), 4.0))
    ax.boxplot([v for _, v in groups], tick_labels=[n for n, _ in groups],
               showfliers=False)
    if hline is not None:
        ax.axhline(hline, linestyle="--", color="grey", linewidth=1.0)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=45)
    for label in ax.get_xticklabels():
        label.set_horizontalalignment("right")
    fig.tight_layout()
    return fig


def _plot_rq1(study_dir: Path) -> None:
    header, rows = read_csv(study_dir / "summary.csv")
    datasets = [row[header.index("dataset")] for row in rows]  # already DR-ordered
    groups = []
    for name in datasets:
        _, ratio_rows = read_csv(study_dir / dataset_dirname(name) / "auc_ratio.csv")
        groups.append((name, [float(r[1]) for r in ratio_rows]))
    fig = _boxplot_by_group(
        groups, "AUC ratio (discretized / regression-based)",
        "AUC ratio by dataset, ordered by defective ratio",
    )
    _save(fig, study_dir / "auc_ratio_by_dataset.svg")


def _plot_shift_bars(study_dir: Path, columns: list[str], out_name: str, title: str) -> None:
    header, rows = read_csv(study_dir / "summary.csv")
    datasets = [row[header.index("dataset")] for row in rows]
    shifts = {
        col: [parse_cell(row[header.index(col)]) for row in rows] for col in columns
    }
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(datasets) + 2.0), 4.0))
    width = 0.8 / len(columns)
    xs = range(len(datasets))
    for i, col in enumerate(columns):
        values = shifts[col]
        offset = (i - (len(columns) - 1) / 2.0) * width
        rank = col.split("shift_rank")[1].split("_")[0]
        bars = ax.bar([x + offset for x in xs], values, width=width, label=f"rank {rank}")
        mean = sum(values) / len(values)
        ax.axhline(mean, linestyle="--", color=bars[0].get_facecolor(), linewidth=1.0)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(datasets, rotation=45, ha="right")
    ax.set_ylabel("rank shift")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, study_dir / out_name)


def _plot_rq2(study_dir: Path) -> None:
    header, _ = read_csv(study_dir / "summary.csv")
    columns = [c for c in header if c.startswith("shift_rank")]
    _plot_shift_bars(study_dir, columns, "rank_shifts.svg",
                     "Per-rank feature rank shifts between the two arms")


def _plot_importance_cmp(study_dir: Path) -> None:
    header, _ = read_csv(study_dir / "summary.csv")
    for source in ("permutation", "impurity"):
        columns = [c for c in header if c.startswith("shift_rank") and c.endswith(source)]
        _plot_shift_bars(study_dir, columns, f"rank_shifts_{source}.svg",
                         f"Per-rank shifts under {source} importance")


def _plot_sweep(study_dir: Path) -> None:
    _, rows = read_csv(study_dir / "summary.csv")
    for row in rows:
        name = row[0]
        ds_dir = study_dir / dataset_dirname(name)
        _, ratio_rows = read_csv(ds_dir / "ratio_iterations.csv")
        by_ratio: dict[str, list[float]] = {}
        for ratio, value in ratio_rows:
            by_ratio.setdefault(ratio, []).append(float(value))
        groups = [(ratio, values) for ratio, values in by_ratio.items()]
        fig = _boxplot_by_group(
            groups, "AUC ratio (discretized / regression-based)",
            f"{name}: AUC ratio by forced defective ratio",
        )
        _save(fig, ds_dir / "ratio_boxplot.svg")


_PLOTTERS = {
    "rq1": _plot_rq1,
    "rq2": _plot_rq2,
    "ratio-sweep": _plot_sweep,
    "importance-cmp": _plot_importance_cmp,
}


def render_study_plots(study: str, study_dir: Path) -> None:
    plotter = _PLOTTERS.get(study)
    if plotter is None:
        return
    with plt.rc_context(SVG_SETTINGS):
        plotter(Path(study_dir))
