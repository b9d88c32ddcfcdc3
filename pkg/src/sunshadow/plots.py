"""Figure rendering for the report paths.

Every function writes a PNG next to the delimited output it illustrates
and returns the path. Uses the Agg backend so the CLI works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import STRATEGY_ORDER, ScoreRow
from .synth import ResponseExperiment, SubsampleGrid


def save_convergence_histogram(
    iterations: np.ndarray,
    converged: np.ndarray,
    max_iterations: int,
    path: Path | str,
) -> Path:
    """Histogram of per-pixel iterations-to-convergence."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.arange(0.5, max_iterations + 1.5)
    ax.hist(iterations[converged], bins=bins, color="#3572b0", label="converged")
    n_unconverged = int((~converged).sum())
    if n_unconverged:
        ax.axvline(max_iterations, color="#c0392b", linestyle="--",
                   label=f"{n_unconverged} unconverged")
    ax.set_xlabel("iterations to convergence")
    ax.set_ylabel("pixels")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_strategy_bars(rows: list[ScoreRow], path: Path | str) -> Path:
    """Grouped accuracy bars: one group per algorithm, one bar per strategy."""
    path = Path(path)
    algorithms = sorted({r.algorithm for r in rows})
    strategies = [s for s in STRATEGY_ORDER if any(r.strategy == s for r in rows)]
    strategies += sorted({r.strategy for r in rows} - set(strategies))

    def value(algorithm, strategy):
        cells = [r.accuracy_percent for r in rows
                 if r.algorithm == algorithm and r.strategy == strategy]
        if not cells:
            cells = [r.accuracy_percent for r in rows
                     if r.algorithm == algorithm and r.strategy == "all"]
        return float(np.mean(cells)) if cells else np.nan

    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(strategies), 1)
    xs = np.arange(len(algorithms))
    for k, strategy in enumerate(strategies):
        heights = [value(a, strategy) for a in algorithms]
        ax.bar(xs + k * width, heights, width=width, label=strategy)
    ax.set_xticks(xs + width * (len(strategies) - 1) / 2)
    ax.set_xticklabels(algorithms)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 102)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_sweep_curves(
    rows_by_scene: dict[str, list],
    path: Path | str,
    algorithm: str,
) -> Path:
    """Accuracy along the parameter grid, one line per scene."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    for scene, rows in sorted(rows_by_scene.items()):
        accuracies = [100.0 * r.accuracy for r in rows]
        ax.plot(range(len(rows)), accuracies, marker="o", markersize=3,
                label=scene or "scene")
    ax.set_xlabel("grid point")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(f"{algorithm} parameter sweep")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_response_curves(experiment: ResponseExperiment, path: Path | str) -> Path:
    """Accuracy under each response distortion vs. the clean run."""
    path = Path(path)
    labels = [label for label, _ in experiment.rows]
    values = [100.0 * acc for _, acc in experiment.rows]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.axhline(100.0 * experiment.clean_accuracy, color="#444444",
               linestyle="--", label="clean")
    ax.bar(range(len(values)), values, color="#3572b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(max(0.0, min(values) - 2.0), 101.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_subsample_heatmap(grid: SubsampleGrid, path: Path | str) -> Path:
    """Median accuracy over the (frame count, span) grid."""
    path = Path(path)
    medians = np.array(
        [[grid.cell_median(i, j) for j in range(len(grid.spans_days))]
         for i in range(len(grid.counts))]
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    image = ax.imshow(100.0 * medians, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xticks(range(len(grid.spans_days)))
    ax.set_xticklabels([f"{s:g}" for s in grid.spans_days])
    ax.set_yticks(range(len(grid.counts)))
    ax.set_yticklabels([str(c) for c in grid.counts])
    ax.set_xlabel("span (days)")
    ax.set_ylabel("frames")
    fig.colorbar(image, ax=ax, label="median accuracy (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
