"""Figure rendering writes valid PNGs for every report path."""

import numpy as np

from sunshadow import io as sio
from sunshadow import plots
from sunshadow.baselines import FtlvParams, SweepRow
from sunshadow.metrics import ScoreRow
from sunshadow.synth import ResponseExperiment, SubsampleGrid


def is_png(path):
    return path.exists() and path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_convergence_histogram(tmp_path):
    iterations = np.array([1, 2, 2, 3, 50, 50])
    converged = np.array([True, True, True, True, False, False])
    path = plots.save_convergence_histogram(iterations, converged, 50, tmp_path / "c.png")
    assert is_png(path)


def test_strategy_bars(tmp_path):
    rows = [
        ScoreRow("em", "all", "wall", 99.9),
        ScoreRow("ftlv", "suggested", "wall", 74.2),
        ScoreRow("ftlv", "optimal", "wall", 82.0),
    ]
    assert is_png(plots.save_strategy_bars(rows, tmp_path / "bars.png"))


def test_sweep_curves(tmp_path):
    rows = {
        "wall": [SweepRow("ftlv", FtlvParams(0.1, k), 0.5 + 0.1 * i, 100)
                 for i, k in enumerate((1.1, 1.5, 2.0))],
    }
    assert is_png(plots.save_sweep_curves(rows, tmp_path / "sweep.png", "ftlv"))


def test_response_curves(tmp_path):
    experiment = ResponseExperiment(
        clean_accuracy=0.999,
        rows=[("gamma:0.4", 0.96), ("gamma:2.2", 0.98), ("cubic:0.8,0.3", 0.999)],
    )
    assert is_png(plots.save_response_curves(experiment, tmp_path / "resp.png"))


def test_subsample_heatmap(tmp_path):
    grid = SubsampleGrid(
        counts=[5, 25],
        spans_days=[0.125, 365.0],
        accuracies=[[[0.8, 0.82], None], [[0.96, 0.95], [0.999]]],
    )
    assert is_png(plots.save_subsample_heatmap(grid, tmp_path / "grid.png"))
