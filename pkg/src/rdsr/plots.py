"""Matplotlib rendering of run reports: loss traces and kernel evolution."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

LOSS_SERIES = ["charb_dn", "cycle_fwd", "cycle_bwd", "reg", "gan", "disc",
               "penalty", "total"]


def _read_trace(report_csv: Path) -> dict[str, list[tuple[int, float]]]:
    series: dict[str, list[tuple[int, float]]] = {k: [] for k in LOSS_SERIES}
    series["nr_score"] = []
    with open(report_csv, newline="") as f:
        for row in csv.DictReader(f):
            it = int(row["iteration"])
            for key, points in series.items():
                v = row.get(key, "")
                if v:
                    points.append((it, float(v)))
    return series


def plot_loss_traces(report_csv, out_path) -> Path:
    series = _read_trace(Path(report_csv))
    fig, (ax, ax_nr) = plt.subplots(2, 1, figsize=(8, 7), sharex=True,
                                    height_ratios=[3, 1])
    for key in LOSS_SERIES:
        points = series[key]
        if not points:
            continue
        its, vals = zip(*points)
        ax.plot(its, vals, label=key, linewidth=0.8)
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8, ncol=2)
    ax.grid(alpha=0.3)
    if series["nr_score"]:
        its, vals = zip(*series["nr_score"])
        ax_nr.plot(its, vals, "o-", color="tab:red", markersize=3)
    ax_nr.set_xlabel("iteration")
    ax_nr.set_ylabel("NR score")
    ax_nr.grid(alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _read_kernel_grid(path: Path) -> np.ndarray:
    """Read a kernel snapshot grid without normalization checks; snapshots
    taken mid-training need not sum to one."""
    return np.loadtxt(path, skiprows=1, ndmin=2)


def plot_kernel_evolution(kernels_dir, out_path, max_panels: int = 12) -> Path:
    paths = sorted(Path(kernels_dir).glob("iter_*.txt"))
    if not paths:
        raise FileNotFoundError(f"no kernel snapshots in {kernels_dir}")
    if len(paths) > max_panels:
        idx = np.linspace(0, len(paths) - 1, max_panels).round().astype(int)
        paths = [paths[i] for i in sorted(set(idx))]
    ncols = min(4, len(paths))
    nrows = math.ceil(len(paths) / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.2 * ncols, 2.2 * nrows))
    axes = np.atleast_1d(axes).ravel()
    for ax, path in zip(axes, paths):
        ax.imshow(_read_kernel_grid(path), cmap="viridis")
        ax.set_title(path.stem.replace("iter_", "it "), fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    for ax in axes[len(paths):]:
        ax.axis("off")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_report_figures(report_dir) -> list[Path]:
    """Render the standard figure set next to a run's report.csv."""
    report_dir = Path(report_dir)
    out = [plot_loss_traces(report_dir / "report.csv",
                            report_dir / "loss_curves.png")]
    kernels = report_dir / "kernels"
    if kernels.is_dir() and any(kernels.glob("iter_*.txt")):
        out.append(plot_kernel_evolution(kernels,
                                         report_dir / "kernel_evolution.png"))
    return out
