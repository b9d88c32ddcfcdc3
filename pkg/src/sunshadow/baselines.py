"""Prior thresholding baselines for shadow estimation.

Two published heuristics used for comparison: a fixed per-pixel percentile
threshold (FTLV) and an adaptive dual-centroid threshold that tracks
seasonal intensity drift (HS). Both operate on grayscale trajectories,
pixel by pixel, and are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ImageSequence, LabelMaskSet, ShadowVolume
from .errors import DataError

__all__ = [
    "FtlvParams",
    "HsParams",
    "SweepRow",
    "ftlv_shadows",
    "hs_shadows",
    "nearest_rank_percentile",
    "parameter_sweep",
    "default_ftlv_grid",
    "default_hs_grid",
    "summarize_strategies",
]


@dataclass(frozen=True)
class FtlvParams:
    """Percentile-threshold parameters; defaults are the suggested values."""

    theta_p: float = 0.2
    theta_k: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.theta_p < 1.0:
            raise DataError("theta_p must lie in (0, 1)")
        if not self.theta_k > 0.0:
            raise DataError("theta_k must be > 0")


@dataclass(frozen=True)
class HsParams:
    """Adaptive-centroid parameters; defaults are the suggested values."""

    theta_p: float = 0.8
    theta_lambda: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.theta_p < 1.0:
            raise DataError("theta_p must lie in (0, 1)")
        if not 0.0 <= self.theta_lambda <= 1.0:
            raise DataError("theta_lambda must lie in [0, 1]")


def nearest_rank_percentile(values: np.ndarray, fraction: float) -> np.ndarray:
    """Nearest-rank lower percentile along axis 0: rank ceil(f*n) in [1, n]."""
    n = values.shape[0]
    if n == 0:
        raise DataError("percentile of an empty trajectory")
    rank = min(max(math.ceil(fraction * n), 1), n)
    return np.sort(values, axis=0)[rank - 1]


def _require_grayscale(seq: ImageSequence):
    if not seq.is_grayscale:
        raise DataError("baselines expect a grayscale sequence")


def ftlv_shadows(seq: ImageSequence, params: FtlvParams | None = None) -> ShadowVolume:
    """Fixed-threshold labels: lit wherever I >= theta_k * per(I, theta_p)."""
    params = params or FtlvParams()
    _require_grayscale(seq)
    threshold = params.theta_k * nearest_rank_percentile(seq.frames, params.theta_p)
    labels = (seq.frames >= threshold[None, :]).astype(np.uint8)
    return ShadowVolume(
        labels=labels,
        converged=np.ones(seq.n_pixels, dtype=bool),
        sky_mask=seq.sky_mask,
    )


def hs_shadows(seq: ImageSequence, params: HsParams | None = None) -> ShadowVolume:
    """Adaptive dual-centroid labels.

    Per pixel, lit/shadow centroids start at the top and bottom theta_p
    percentiles of the trajectory (top meaning rank ceil(theta_p*n) from
    the brightest end). A forward chronological pass pulls the nearer
    centroid toward each intensity with smoothing theta_lambda; the pass
    is then reversed, continuing from the forward end state, and the
    reversed-pass centroids classify each frame. Ties go to lit.
    """
    params = params or HsParams()
    _require_grayscale(seq)
    intens = seq.frames
    n = seq.n_frames
    rank = min(max(math.ceil(params.theta_p * n), 1), n)
    ordered = np.sort(intens, axis=0)
    e_lit = ordered[n - rank].copy()
    e_shadow = ordered[rank - 1].copy()

    lam = params.theta_lambda
    for t in range(n):
        frame = intens[t]
        toward_lit = np.abs(e_lit - frame) < np.abs(e_shadow - frame)
        e_lit = np.where(toward_lit, e_lit * lam + frame * (1.0 - lam), e_lit)
        e_shadow = np.where(toward_lit, e_shadow, e_shadow * lam + frame * (1.0 - lam))

    labels = np.empty((n, seq.n_pixels), dtype=np.uint8)
    for t in range(n - 1, -1, -1):
        frame = intens[t]
        toward_lit = np.abs(e_lit - frame) < np.abs(e_shadow - frame)
        e_lit = np.where(toward_lit, e_lit * lam + frame * (1.0 - lam), e_lit)
        e_shadow = np.where(toward_lit, e_shadow, e_shadow * lam + frame * (1.0 - lam))
        labels[t] = np.abs(frame - e_lit) <= np.abs(frame - e_shadow)

    return ShadowVolume(
        labels=labels,
        converged=np.ones(seq.n_pixels, dtype=bool),
        sky_mask=seq.sky_mask,
    )


# ---------------------------------------------------------------------------
# Parameter sweeps (cross-validation protocol)


@dataclass(frozen=True)
class SweepRow:
    """One grid point: which parameters on which scene scored how well."""

    algorithm: str
    params: FtlvParams | HsParams
    accuracy: float
    labeled: int


def _run_baseline(seq: ImageSequence, params) -> ShadowVolume:
    if isinstance(params, FtlvParams):
        return ftlv_shadows(seq, params)
    if isinstance(params, HsParams):
        return hs_shadows(seq, params)
    raise DataError(f"unsupported parameter type {type(params).__name__}")


def parameter_sweep(
    seq: ImageSequence,
    labels: LabelMaskSet,
    grid: list[FtlvParams] | list[HsParams],
) -> list[SweepRow]:
    """Score every grid point against the labels; empty grids are rejected."""
    from .metrics import score  # local import to keep module dependencies one-way

    if not grid:
        raise DataError("parameter grid is empty")
    rows = []
    for params in grid:
        volume = _run_baseline(seq, params)
        algorithm = "ftlv" if isinstance(params, FtlvParams) else "hs"
        report = score(volume, labels, algorithm=algorithm)
        rows.append(
            SweepRow(
                algorithm=algorithm,
                params=params,
                accuracy=report.accuracy,
                labeled=report.labeled,
            )
        )
    return rows


def default_ftlv_grid() -> list[FtlvParams]:
    return [
        FtlvParams(theta_p=p, theta_k=k)
        for p in (0.02, 0.05, 0.1, 0.2, 0.3)
        for k in (1.1, 1.3, 1.5, 1.8, 2.1, 2.5)
    ]


def default_hs_grid() -> list[HsParams]:
    return [
        HsParams(theta_p=p, theta_lambda=lam)
        for p in (0.02, 0.05, 0.1, 0.2, 0.3)
        for lam in (0.005, 0.01, 0.02, 0.05, 0.1, 0.2)
    ]


def summarize_strategies(
    per_scene: dict[str, list[SweepRow]],
    suggested: FtlvParams | HsParams,
) -> dict[str, list[tuple[str, float]]]:
    """Suggested / Global / Optimal accuracies per scene from sweep rows.

    Suggested evaluates the published defaults (which must be a grid
    point); Global picks the single grid point with the best mean accuracy
    across scenes; Optimal picks the best point per scene. Returns
    strategy -> [(scene, accuracy)].
    """
    if not per_scene:
        raise DataError("no sweep results given")
    scenes = sorted(per_scene)
    point_count = len(per_scene[scenes[0]])
    grids = [row.params for row in per_scene[scenes[0]]]
    for scene in scenes:
        rows = per_scene[scene]
        if len(rows) != point_count or [r.params for r in rows] != grids:
            raise DataError("sweeps disagree on the parameter grid across scenes")

    try:
        suggested_index = grids.index(suggested)
    except ValueError:
        raise DataError("suggested parameters are not a grid point") from None

    mean_by_point = [
        float(np.mean([per_scene[scene][i].accuracy for scene in scenes]))
        for i in range(point_count)
    ]
    global_index = int(np.argmax(mean_by_point))

    table: dict[str, list[tuple[str, float]]] = {"suggested": [], "global": [], "optimal": []}
    for scene in scenes:
        rows = per_scene[scene]
        table["suggested"].append((scene, rows[suggested_index].accuracy))
        table["global"].append((scene, rows[global_index].accuracy))
        best = max(range(point_count), key=lambda i: rows[i].accuracy)
        table["optimal"].append((scene, rows[best].accuracy))
    return table
