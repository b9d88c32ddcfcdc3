"""Parameter-free EM shadow estimator.

Alternates a per-pixel least-squares fit of the Lambertian-plus-skylight
model (expectation step) with per-observation shadow relabeling by
reconstruction residual (maximization step) until the labels stop
changing. Every pixel is independent, so the driver partitions pixels
across workers; results do not depend on the partitioning.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ImageSequence, LightingTable, PixelModel, ShadowVolume
from .errors import DataError, DimensionMismatchError

log = logging.getLogger(__name__)

# Gray albedo below this is treated as undefined (normal cannot be normalized).
RHO_EPS = 1e-12
# Color-albedo terms whose shading denominator is smaller than this are dropped.
DENOM_EPS = 1e-9


@dataclass
class EmConfig:
    """Knobs for the EM driver.

    max_iterations -- hard cap on E/M alternations per pixel
    rank_tolerance -- relative singular-value cutoff for the rank test
    worker_count   -- pixel-partition width; "auto" uses the CPU count.
                      The result is identical for every worker count.
    """

    max_iterations: int = 50
    rank_tolerance: float = 1e-8
    worker_count: int | str = "auto"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DataError("max_iterations must be >= 1")
        if not self.rank_tolerance > 0:
            raise DataError("rank_tolerance must be > 0")
        if self.worker_count != "auto":
            if int(self.worker_count) < 1:
                raise DataError("worker_count must be >= 1 or 'auto'")
            self.worker_count = int(self.worker_count)

    def resolved_workers(self) -> int:
        if self.worker_count == "auto":
            return os.cpu_count() or 1
        return int(self.worker_count)


@dataclass
class EmResult:
    """Output of run_em: labels plus the recovered per-pixel model."""

    shadows: ShadowVolume
    model: PixelModel
    iterations_to_converge: np.ndarray  # (p,) int
    rank_deficient: np.ndarray          # (p,) bool


def initialize_shadows(seq: ImageSequence) -> ShadowVolume:
    """All frames start lit except each pixel's single dimmest frame.

    Intensity ties break toward the earliest frame.
    """
    if not seq.is_grayscale:
        raise DataError("initialization expects a grayscale sequence")
    labels = np.ones((seq.n_frames, seq.n_pixels), dtype=np.uint8)
    dimmest = np.argmin(seq.frames, axis=0)
    labels[dimmest, np.arange(seq.n_pixels)] = 0
    return ShadowVolume(
        labels=labels,
        converged=np.zeros(seq.n_pixels, dtype=bool),
        sky_mask=seq.sky_mask,
    )


def _design_matrices(lights: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-pixel (n, 4) systems [S_t * L_t^T | 1], stacked as (p, n, 4)."""
    n, p = labels.shape
    design = np.empty((p, n, 4))
    design[:, :, :3] = labels.T[:, :, None] * lights[None, :, :]
    design[:, :, 3] = 1.0
    return design


def _solve_batch(lights, labels, intens, tol):
    """Least-squares (a, b, c, d) for every pixel via batched SVD.

    Returns (aux (p, 4), ranks (p,)). Rank counts singular values above
    tol times the largest; solutions for deficient pixels are the
    truncated pseudo-inverse solve and are only used after repair.
    """
    design = _design_matrices(lights, labels)
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    keep = s > tol * s[:, :1]
    ranks = keep.sum(axis=1)
    utb = np.einsum("pnk,np->pk", u, intens)
    z = np.where(keep, utb / np.where(s > 0.0, s, 1.0), 0.0)
    aux = np.einsum("pkj,pk->pj", vt, z)
    return aux, ranks


def _rank_single(lights, labels_col, tol) -> int:
    design = np.empty((labels_col.shape[0], 4))
    design[:, :3] = labels_col[:, None] * lights
    design[:, 3] = 1.0
    s = np.linalg.svd(design, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int((s > tol * s[0]).sum())


def _solve_single(lights, labels_col, intens_col, tol):
    aux, _ = _solve_batch(lights, labels_col[:, None], intens_col[:, None], tol)
    return aux[0]


def _repair_pixel(intens_col, lights, labels_col, tol):
    """Raise the brightest shadowed frames to lit until the system is full rank.

    Returns (labels, deficient). deficient is True when every frame is lit
    and the system is still singular (e.g. fewer than four frames).
    """
    labels_col = labels_col.copy()
    while _rank_single(lights, labels_col, tol) < 4:
        shadowed = np.flatnonzero(labels_col == 0)
        if shadowed.size == 0:
            return labels_col, True
        brightest = shadowed[np.argmax(intens_col[shadowed])]
        labels_col[brightest] = 1
    return labels_col, False


def _relabel(intens, lights, aux):
    """Residual-comparison labels: lit wherever the lit reconstruction is
    strictly better.

    Equal residuals resolve to shadow. They arise exactly when the hinge
    zeroes the sun term (the surface faces away from the sun), and the
    shadow labeling there is what lets the volume stabilize to cover
    attached shadows.
    """
    dots = np.einsum("nk,pk->np", lights, aux[:, :3])
    pred_lit = np.maximum(dots, 0.0) + aux[:, 3][None, :]
    r_lit = (intens - pred_lit) ** 2
    r_shadow = (intens - aux[:, 3][None, :]) ** 2
    return (r_lit < r_shadow).astype(np.uint8)


def _labeling_residual(intens_col, lights, aux, labels_col) -> float:
    """Total squared residual of one pixel's labeling under model aux."""
    dots = lights @ aux[:3]
    pred = np.where(labels_col == 1, np.maximum(dots, 0.0) + aux[3], aux[3])
    return float(((intens_col - pred) ** 2).sum())


def _em_chunk(intens, lights, init_labels, forced, cfg: EmConfig):
    """Run the full EM loop for one contiguous block of pixels.

    All arrays cover above-horizon frames only. Returns per-pixel labels,
    aux solutions, iteration counts, convergence flags, and the
    singular-after-repair flags.
    """
    n, p = intens.shape
    tol = cfg.rank_tolerance
    labels = init_labels.copy()
    prev_labels = init_labels.copy()
    aux = np.full((p, 4), np.nan)
    iters = np.zeros(p, dtype=np.int32)
    converged = np.zeros(p, dtype=bool)
    sys_deficient = np.zeros(p, dtype=bool)

    if forced.any():
        f = np.flatnonzero(forced)
        labels[:, f] = 1
        aux[f], _ = _solve_batch(lights, labels[:, f], intens[:, f], tol)
        converged[f] = True

    active = ~forced
    for iteration in range(1, cfg.max_iterations + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pre = labels[:, idx]
        fit_labels = pre.copy()
        aux_a, ranks = _solve_batch(lights, fit_labels, intens[:, idx], tol)

        frozen = np.zeros(idx.size, dtype=bool)
        for j in np.flatnonzero(ranks < 4):
            repaired, deficient = _repair_pixel(intens[:, idx[j]], lights, pre[:, j], tol)
            if deficient:
                frozen[j] = True
                fit_labels[:, j] = repaired
            else:
                fit_labels[:, j] = repaired
                aux_a[j] = _solve_single(lights, repaired, intens[:, idx[j]], tol)

        # Relabeling works directly on (a, b, c, d); it stays well defined
        # even when the gray albedo vanishes (a constant pixel then drifts
        # to all-shadow and converges through the reassignment rule).
        new = _relabel(intens[:, idx], lights, aux_a)
        if frozen.any():
            new[:, frozen] = fit_labels[:, frozen]
            aux_a[frozen] = np.nan

        done = (new == pre).all(axis=0) | frozen
        prev_labels[:, idx] = labels[:, idx]
        labels[:, idx] = new
        aux[idx] = aux_a
        finished = idx[done]
        iters[finished] = iteration
        converged[finished] = True
        sys_deficient[idx[frozen]] = True
        active[finished] = False

    # Pixels still oscillating at the cap keep whichever of their last two
    # labelings reconstructs the data with lower total squared residual.
    for col in np.flatnonzero(active):
        best = None
        for cand in (prev_labels[:, col], labels[:, col]):
            fit, deficient = _repair_pixel(intens[:, col], lights, cand, tol)
            if deficient:
                resid, cand_aux = np.inf, np.full(4, np.nan)
            else:
                cand_aux = _solve_single(lights, fit, intens[:, col], tol)
                resid = _labeling_residual(intens[:, col], lights, cand_aux, cand)
            if best is None or resid <= best[0]:
                best = (resid, cand.copy(), cand_aux)
        _, labels[:, col], aux[col] = best
        iters[col] = cfg.max_iterations

    # A pixel counts as frozen-singular also when its kept labeling could
    # not be repaired at the cap.
    capped = np.flatnonzero(active)
    if capped.size:
        sys_deficient[capped] |= ~np.isfinite(aux[capped]).all(axis=1)

    return labels, aux, iters, converged, sys_deficient


def _final_ranks(lights, labels, tol):
    design = _design_matrices(lights, labels)
    s = np.linalg.svd(design, compute_uv=False)
    lead = np.where(s[:, :1] > 0.0, s[:, :1], 1.0)
    return (s > tol * lead).sum(axis=1)


def _model_from_aux(aux, sky_mask) -> PixelModel:
    rho = np.linalg.norm(aux[:, :3], axis=1)
    ok = np.isfinite(aux).all(axis=1)
    usable = ok & (rho >= RHO_EPS)
    normal = np.full((aux.shape[0], 3), np.nan)
    skylight = np.full(aux.shape[0], np.nan)
    normal[usable] = aux[usable, :3] / rho[usable, None]
    skylight[usable] = aux[usable, 3] / rho[usable]
    gray = np.where(ok, rho, np.nan)
    return PixelModel(
        aux=aux,
        gray_albedo=gray,
        normal=normal,
        skylight=skylight,
        sky_mask=sky_mask,
    )


def _check_inputs(seq: ImageSequence, lights: LightingTable):
    if not seq.is_grayscale:
        raise DataError("EM operates on grayscale sequences; convert with to_grayscale")
    if lights.n_frames != seq.n_frames:
        raise DimensionMismatchError(
            f"{lights.n_frames} lighting directions for {seq.n_frames} frames"
        )


def expectation_step(
    seq: ImageSequence,
    lights: LightingTable,
    shadows: ShadowVolume,
    config: EmConfig | None = None,
) -> PixelModel:
    """Fit (a, b, c, d) per pixel from the current labels, then normalize.

    Below-horizon frames are excluded from every system. Pixels whose
    system is singular (labels not repaired beforehand) are reported and
    carry NaN; pixels with vanishing gray albedo keep aux but have
    undefined normal and skylight.
    """
    cfg = config or EmConfig()
    _check_inputs(seq, lights)
    day = lights.above_horizon
    aux, ranks = _solve_batch(
        lights.directions[day], shadows.labels[day], seq.frames[day], cfg.rank_tolerance
    )
    singular = ranks < 4
    if singular.any():
        log.warning(
            "expectation step: %d of %d pixels have a singular system; "
            "their model is undefined",
            int(singular.sum()),
            aux.shape[0],
        )
        aux[singular] = np.nan
    return _model_from_aux(aux, seq.sky_mask)


def maximization_step(
    seq: ImageSequence,
    lights: LightingTable,
    model: PixelModel,
    previous: ShadowVolume | None = None,
) -> ShadowVolume:
    """Relabel every observation by comparing lit and shadowed residuals.

    Ties resolve to shadow (see _relabel). Below-horizon frames are forced
    to shadow. The residuals are evaluated in (a, b, c, d) form, which
    stays defined even for vanishing gray albedo; only pixels whose system
    was singular (NaN model) are skipped -- they keep their labels from
    `previous` when given, else they are marked lit.
    """
    _check_inputs(seq, lights)
    day = lights.above_horizon
    labels = np.zeros((seq.n_frames, seq.n_pixels), dtype=np.uint8)
    defined = np.isfinite(model.aux).all(axis=1)
    if defined.any():
        day_labels = _relabel(seq.frames[day][:, defined], lights.directions[day], model.aux[defined])
        block = np.zeros((int(day.sum()), seq.n_pixels), dtype=np.uint8)
        block[:, defined] = day_labels
        labels[day] = block
    if not defined.all():
        skipped = ~defined
        if previous is not None:
            labels[np.ix_(day, skipped)] = previous.labels[np.ix_(day, skipped)]
        else:
            labels[np.ix_(day, skipped)] = 1
    return ShadowVolume(
        labels=labels,
        converged=np.zeros(seq.n_pixels, dtype=bool),
        sky_mask=seq.sky_mask,
    )


def repair_rank(
    seq: ImageSequence,
    lights: LightingTable,
    shadows: ShadowVolume,
    pixel: int,
    config: EmConfig | None = None,
) -> tuple[np.ndarray, bool]:
    """Repair one pixel's labels until its system is numerically full rank.

    Returns (labels over all frames, deficient). The brightest shadowed
    frame is raised to lit repeatedly (intensity ties break toward the
    earliest frame); only above-horizon frames participate. deficient is
    True when the system stays singular with every frame lit.
    """
    cfg = config or EmConfig()
    _check_inputs(seq, lights)
    day = lights.above_horizon
    labels = shadows.labels[:, pixel].copy()
    repaired, deficient = _repair_pixel(
        seq.frames[day][:, pixel], lights.directions[day], labels[day], cfg.rank_tolerance
    )
    labels[day] = repaired
    return labels, deficient


def run_em(
    seq: ImageSequence,
    lights: LightingTable,
    config: EmConfig | None = None,
) -> EmResult:
    """Full EM: initialize, iterate repair/expectation/maximization per pixel.

    Each pixel stops as soon as a maximization step reproduces the labels
    it entered the iteration with (this also implements the reassignment
    convergence rule: a repaired pixel whose post-E/M labeling equals its
    pre-repair labeling is accepted as converged). Pixels still changing
    at max_iterations keep the better of their last two labelings.

    Below-horizon frames are excluded from every system and forced to
    shadow in the output. Pixels flagged force_lit by saturation repair
    stay lit and are never relabeled. The result is bit-identical for
    every worker count.
    """
    cfg = config or EmConfig()
    _check_inputs(seq, lights)
    n, p = seq.n_frames, seq.n_pixels
    day = lights.above_horizon
    n_day = int(day.sum())

    forced = (
        seq.force_lit.copy() if seq.force_lit is not None else np.zeros(p, dtype=bool)
    )

    if n_day == 0:
        log.warning("run_em: no above-horizon frames; labels are all shadow")
        labels = np.zeros((n, p), dtype=np.uint8)
        aux = np.full((p, 4), np.nan)
        shadows = ShadowVolume(labels=labels, converged=np.ones(p, dtype=bool), sky_mask=seq.sky_mask)
        return EmResult(
            shadows=shadows,
            model=_model_from_aux(aux, seq.sky_mask),
            iterations_to_converge=np.zeros(p, dtype=np.int32),
            rank_deficient=np.ones(p, dtype=bool),
        )

    intens = seq.frames[day]
    l_day = lights.directions[day]

    init = np.ones((n_day, p), dtype=np.uint8)
    dimmest = np.argmin(intens, axis=0)
    init[dimmest, np.arange(p)] = 0
    init[:, forced] = 1

    workers = min(cfg.resolved_workers(), p) or 1
    bounds = np.linspace(0, p, workers + 1).astype(int)
    chunks = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run_block(span):
        lo, hi = span
        return _em_chunk(intens[:, lo:hi], l_day, init[:, lo:hi], forced[lo:hi], cfg)

    if len(chunks) == 1:
        results = [run_block(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run_block, chunks))

    day_labels = np.empty((n_day, p), dtype=np.uint8)
    aux = np.empty((p, 4))
    iters = np.empty(p, dtype=np.int32)
    converged = np.empty(p, dtype=bool)
    sys_deficient = np.empty(p, dtype=bool)
    for (lo, hi), (lab, ax, it, conv, sdef) in zip(chunks, results):
        day_labels[:, lo:hi] = lab
        aux[lo:hi] = ax
        iters[lo:hi] = it
        converged[lo:hi] = conv
        sys_deficient[lo:hi] = sdef

    # A pixel whose accepted labeling is itself rank-deficient (for example
    # one that settled on all-shadow through the reassignment rule) has no
    # meaningful model; mark it and blank the estimate.
    final_ranks = _final_ranks(l_day, day_labels, cfg.rank_tolerance)
    label_deficient = final_ranks < 4
    rho = np.linalg.norm(np.nan_to_num(aux[:, :3]), axis=1)
    rank_deficient = sys_deficient | label_deficient | (rho < RHO_EPS)
    aux[sys_deficient | label_deficient] = np.nan

    if rank_deficient.any():
        log.info(
            "run_em: %d of %d pixels are rank-deficient (undefined model)",
            int(rank_deficient.sum()),
            p,
        )

    labels = np.zeros((n, p), dtype=np.uint8)
    labels[day] = day_labels

    shadows = ShadowVolume(labels=labels, converged=converged, sky_mask=seq.sky_mask)
    model = _model_from_aux(aux, seq.sky_mask)
    return EmResult(
        shadows=shadows,
        model=model,
        iterations_to_converge=iters,
        rank_deficient=rank_deficient,
    )


def repair_saturation(seq: ImageSequence) -> ImageSequence:
    """Replace saturated channels with the best color-linearity fit.

    Each pixel's color direction is the mean of its frames with no
    saturated channel; per saturated frame a least-squares scalar maps
    that direction onto the unsaturated channels and rewrites the
    saturated ones (possibly above 255). Pixels white in every channel of
    every frame are flagged force-lit and left untouched; unsaturated
    observations are preserved exactly.
    """
    if seq.is_grayscale:
        raise DataError("saturation repair expects a color sequence")
    intens = seq.frames
    sat = intens >= 255.0
    repaired = intens.copy()
    full_white = sat.all(axis=(0, 2))

    clean_frame = ~sat.any(axis=2)            # (n, p)
    n_clean = clean_frame.sum(axis=0)          # (p,)
    fixable = (n_clean > 0) & sat.any(axis=(0, 2))
    if fixable.any():
        weights = clean_frame[:, :, None].astype(np.float64)
        color = (intens * weights).sum(axis=0) / np.maximum(n_clean, 1)[:, None]  # (p, 3)
        unsat = (~sat).astype(np.float64)
        num = np.einsum("npc,pc->np", intens * unsat, color)
        den = np.einsum("npc,pc->np", unsat, color**2)
        alpha = np.divide(num, den, out=np.zeros_like(num), where=den > 0.0)
        fitted = alpha[:, :, None] * color[None, :, :]
        replace = sat & (den > 0.0)[:, :, None] & fixable[None, :, None]
        repaired[replace] = fitted[replace]

    unfixable = (n_clean == 0) & ~full_white & sat.any(axis=(0, 2))
    if unfixable.any():
        log.warning(
            "saturation repair: %d pixels have no clean frame and were left as is",
            int(unfixable.sum()),
        )

    force = full_white.copy()
    if seq.force_lit is not None:
        force |= seq.force_lit
    return ImageSequence(
        frames=repaired,
        timestamps=list(seq.timestamps),
        latitude=seq.latitude,
        longitude=seq.longitude,
        sky_mask=seq.sky_mask,
        force_lit=force,
    )


def finalize_color(
    seq_color: ImageSequence,
    lights: LightingTable,
    result: EmResult,
) -> PixelModel:
    """Closed-form RGB albedo from the converged grayscale model.

    Per channel, the albedo is the mean of intensity over predicted
    shading across above-horizon frames; terms whose shading denominator
    falls below 1e-9 are dropped and the mean count adjusted. Pixels with
    an undefined model, or with every term dropped, keep NaN albedo.
    """
    if seq_color.is_grayscale:
        raise DataError("color finalization expects the color sequence")
    if lights.n_frames != seq_color.n_frames:
        raise DimensionMismatchError("lighting table and sequence disagree on frame count")
    model = result.model
    day = lights.above_horizon
    denominator_defined = model.defined()

    albedo = np.full((seq_color.n_pixels, 3), np.nan)
    if denominator_defined.any() and day.any():
        normals = model.normal[denominator_defined]
        dots = np.einsum("nk,pk->np", lights.directions[day], normals)
        s_day = result.shadows.labels[day][:, denominator_defined]
        denom = np.maximum(dots, 0.0) * s_day + model.skylight[denominator_defined][None, :]
        good = denom >= DENOM_EPS
        counts = good.sum(axis=0)
        frames = seq_color.frames[day][:, denominator_defined, :]
        ratios = frames / np.where(good, denom, 1.0)[:, :, None]
        sums = (ratios * good[:, :, None]).sum(axis=0)
        values = np.divide(
            sums,
            counts[:, None],
            out=np.full_like(sums, np.nan),
            where=counts[:, None] > 0,
        )
        albedo[denominator_defined] = values

    return PixelModel(
        aux=model.aux,
        gray_albedo=model.gray_albedo,
        normal=model.normal,
        skylight=model.skylight,
        sky_mask=model.sky_mask,
        albedo_rgb=albedo,
    )
