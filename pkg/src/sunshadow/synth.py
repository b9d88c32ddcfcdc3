"""Synthetic outdoor scenes with exact ground truth.

Heightfield geometry lit by the real solar trajectory for a geolocation:
Lambertian shading with a skylight term, cast shadows by ray-marching the
heightfield toward the sun, and attached shadows (surface facing away)
folded into the ground-truth shadow volume. Also ships the nonlinear
camera-response family and the sequence-subsampling experiment.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from .core import GRAY_WEIGHTS, ImageSequence, LightingTable, ShadowVolume, ensure_utc, to_grayscale
from .em import EmConfig, run_em
from .errors import DataError
from .solar import SolarQuery, solar_angles, sun_direction

log = logging.getLogger(__name__)

# A ray sample occludes a pixel when it dips below the surface by more than this.
OCCLUSION_EPS = 1e-6


@dataclass
class SyntheticScene:
    """A heightfield scene: geometry, reflectance, and a solar calendar.

    Rows run north to south, columns west to east; heights are in cell
    units. Normals are derived from the heightfield gradients. Albedo is
    in [0, 1] before exposure scaling; skylight is the dimensionless
    ambient multiplier of albedo.
    """

    name: str
    heightfield: np.ndarray      # (H, W)
    albedo_rgb: np.ndarray       # (H, W, 3) in [0, 1]
    skylight: np.ndarray         # (H, W) >= 0
    latitude: float
    longitude: float
    date_start: datetime = datetime(2013, 1, 1, tzinfo=timezone.utc)
    date_span_days: float = 365.0
    cell_size: float = 1.0
    normals: np.ndarray = field(init=False)

    def __post_init__(self):
        self.heightfield = np.asarray(self.heightfield, dtype=np.float64)
        self.albedo_rgb = np.asarray(self.albedo_rgb, dtype=np.float64)
        self.skylight = np.asarray(self.skylight, dtype=np.float64)
        if self.heightfield.ndim != 2:
            raise DataError("heightfield must be 2-D")
        if self.albedo_rgb.shape != self.heightfield.shape + (3,):
            raise DataError("albedo_rgb must be (H, W, 3)")
        if self.skylight.shape != self.heightfield.shape:
            raise DataError("skylight must match the heightfield")
        if (self.heightfield < 0).any():
            raise DataError("heights must be nonnegative")
        if self.albedo_rgb.min() < 0 or self.albedo_rgb.max() > 1:
            raise DataError("albedo must lie in [0, 1] before exposure scaling")
        if (self.skylight < 0).any():
            raise DataError("skylight must be nonnegative")
        if not self.albedo_rgb.any():
            raise DataError("scene albedo is identically zero")
        self.date_start = ensure_utc(self.date_start)
        self.normals = _gradient_normals(self.heightfield, self.cell_size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.heightfield.shape

    def gray_albedo(self, exposure: float = 1.0) -> np.ndarray:
        """(H, W) ground-truth gray albedo in intensity units (0-255 scale)."""
        return 255.0 * exposure * (self.albedo_rgb @ GRAY_WEIGHTS)


def _gradient_normals(heightfield: np.ndarray, cell: float) -> np.ndarray:
    dz_drow, dz_dcol = np.gradient(heightfield, cell)
    # Column axis is East; row axis points South, so d/dNorth = -d/drow.
    normals = np.empty(heightfield.shape + (3,))
    normals[:, :, 0] = -dz_dcol
    normals[:, :, 1] = dz_drow
    normals[:, :, 2] = 1.0
    normals /= np.linalg.norm(normals, axis=2, keepdims=True)
    return normals


def occlusion_mask(scene: SyntheticScene, direction: np.ndarray) -> np.ndarray:
    """(H, W) bool: True where the sun ray is blocked by the heightfield.

    Marches half-pixel steps from each cell toward the sun with bilinear
    height interpolation; a pixel is occluded when any sample's ray height
    falls below the surface by more than OCCLUSION_EPS.
    """
    h = scene.heightfield
    rows, cols = h.shape
    le, ln, lu = (float(direction[0]), float(direction[1]), float(direction[2]))
    if lu <= 0.0:
        return np.ones(h.shape, dtype=bool)
    horizontal = math.hypot(le, ln)
    if horizontal < 1e-12:
        return np.zeros(h.shape, dtype=bool)

    step = 0.5 * scene.cell_size / horizontal
    dcol = le * step / scene.cell_size
    drow = -ln * step / scene.cell_size
    dz = lu * step

    row0, col0 = np.meshgrid(
        np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij"
    )
    row0 = row0.ravel()
    col0 = col0.ravel()
    z0 = h.ravel().copy()
    max_h = h.max()

    occluded = np.zeros(row0.shape, dtype=bool)
    active = np.ones(row0.shape, dtype=bool)
    k = 0
    while active.any():
        k += 1
        idx = np.flatnonzero(active)
        r = row0[idx] + k * drow
        c = col0[idx] + k * dcol
        z = z0[idx] + k * dz
        inside = (r >= 0.0) & (r <= rows - 1.0) & (c >= 0.0) & (c <= cols - 1.0)
        inside &= z <= max_h + OCCLUSION_EPS
        active[idx[~inside]] = False
        if not inside.any():
            break
        sel = idx[inside]
        surface = _bilinear(h, r[inside], c[inside])
        hit = z[inside] < surface - OCCLUSION_EPS
        occluded[sel[hit]] = True
        active[sel[hit]] = False
    return occluded.reshape(h.shape)


def _bilinear(grid: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r0 = np.clip(r0, 0, grid.shape[0] - 2) if grid.shape[0] > 1 else np.zeros_like(r0)
    c0 = np.clip(c0, 0, grid.shape[1] - 2) if grid.shape[1] > 1 else np.zeros_like(c0)
    r1 = np.minimum(r0 + 1, grid.shape[0] - 1)
    c1 = np.minimum(c0 + 1, grid.shape[1] - 1)
    fr = rows - r0
    fc = cols - c0
    return (
        grid[r0, c0] * (1 - fr) * (1 - fc)
        + grid[r0, c1] * (1 - fr) * fc
        + grid[r1, c0] * fr * (1 - fc)
        + grid[r1, c1] * fr * fc
    )


@dataclass
class RenderedSequence:
    """A rendered time-lapse plus everything needed to score against it."""

    sequence: ImageSequence          # color frames, clipped at 255
    truth: ShadowVolume              # ground-truth labels (cast + attached)
    lights: LightingTable
    preclip: np.ndarray              # (n, p, 3) intensities before clipping
    clipped: np.ndarray              # (n, p, 3) bool, True where clipping occurred
    gray_albedo: np.ndarray          # (p,) ground-truth gray albedo, intensity units
    normals: np.ndarray              # (p, 3) ground-truth unit normals
    skylight: np.ndarray             # (p,) ground-truth skylight


def sample_daylight_instants(
    scene: SyntheticScene,
    count: int,
    rng: np.random.Generator,
    start: datetime | None = None,
    span_days: float | None = None,
    min_elevation_deg: float = 2.0,
) -> list[datetime]:
    """Draw `count` distinct instants with the sun above min_elevation_deg.

    Raises DataError when the window cannot supply that many daylight
    instants (used by the subsampling experiment to mark infeasible cells).
    """
    if count < 1:
        raise DataError("count must be >= 1")
    start = ensure_utc(start or scene.date_start)
    span_days = scene.date_span_days if span_days is None else float(span_days)
    span_seconds = span_days * 86400.0
    chosen: dict[int, datetime] = {}
    attempts = 0
    limit = max(2000, count * 400)
    while len(chosen) < count and attempts < limit:
        attempts += 1
        second = int(rng.integers(0, max(int(span_seconds), 1)))
        if second in chosen:
            continue
        instant = start + timedelta(seconds=second)
        _, elevation = solar_angles(instant, scene.latitude, scene.longitude)
        if elevation >= min_elevation_deg:
            chosen[second] = instant
    if len(chosen) < count:
        raise DataError(
            f"window of {span_days} days holds fewer than {count} daylight instants"
        )
    return [chosen[key] for key in sorted(chosen)]


def render_sequence(
    scene: SyntheticScene,
    count: int,
    seed: int | np.random.SeedSequence = 0,
    start: datetime | None = None,
    span_days: float | None = None,
    exposure: float = 1.0,
    min_elevation_deg: float = 2.0,
    quantize: bool = False,
    workers: int | str = "auto",
) -> RenderedSequence:
    """Render a sequence under the scene's solar trajectory.

    Per frame: sun direction from the solar ephemeris; cast-shadow test by
    ray-marching the heightfield; ground truth S=0 where occluded or where
    the surface faces away from the sun; intensity
    255 * exposure * albedo * (max(L.N, 0) * S + skylight), clipped at 255
    with the clip recorded. quantize rounds stored frames to whole
    intensities (8-bit file behavior) without touching preclip. Frames
    render in parallel; the output does not depend on the worker count.
    """
    rng = np.random.default_rng(seed)
    instants = sample_daylight_instants(
        scene, count, rng, start=start, span_days=span_days, min_elevation_deg=min_elevation_deg
    )

    height, width = scene.shape
    p = height * width
    sky_mask = np.ones((height, width), dtype=bool)
    normals = scene.normals.reshape(p, 3)
    rho = (255.0 * exposure) * scene.albedo_rgb.reshape(p, 3)
    ambient = scene.skylight.reshape(p)

    directions = np.empty((count, 3))
    above = np.empty(count, dtype=bool)
    for i, instant in enumerate(instants):
        directions[i], above[i] = sun_direction(
            SolarQuery(instant, scene.latitude, scene.longitude)
        )

    labels = np.empty((count, p), dtype=np.uint8)
    preclip = np.empty((count, p, 3))

    def render_frame(i):
        occluded = occlusion_mask(scene, directions[i]).ravel()
        dots = normals @ directions[i]
        labels[i] = (~occluded) & (dots > 0.0)
        shading = np.maximum(dots, 0.0) * labels[i] + ambient
        preclip[i] = rho * shading[:, None]

    n_workers = os.cpu_count() or 1 if workers == "auto" else max(int(workers), 1)
    n_workers = min(n_workers, count)
    if n_workers <= 1:
        for i in range(count):
            render_frame(i)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(render_frame, range(count)))

    frames = np.minimum(preclip, 255.0)
    clipped = preclip > 255.0
    if quantize:
        frames = np.round(frames)

    sequence = ImageSequence(
        frames=frames,
        timestamps=instants,
        latitude=scene.latitude,
        longitude=scene.longitude,
        sky_mask=sky_mask,
    )
    truth = ShadowVolume(
        labels=labels, converged=np.ones(p, dtype=bool), sky_mask=sky_mask
    )
    lights = LightingTable(directions=directions, above_horizon=above)
    return RenderedSequence(
        sequence=sequence,
        truth=truth,
        lights=lights,
        preclip=preclip,
        clipped=clipped,
        gray_albedo=exposure * 255.0 * (scene.albedo_rgb.reshape(p, 3) @ GRAY_WEIGHTS),
        normals=normals,
        skylight=ambient.copy(),
    )


# ---------------------------------------------------------------------------
# Camera response functions


@dataclass(frozen=True)
class ResponseFunction:
    """A monotone [0,1] -> [0,1] intensity distortion with fixed endpoints."""

    family: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in ("identity", "gamma", "cubic"):
            raise DataError(f"unknown response family '{self.family}'")
        grid = np.linspace(0.0, 1.0, 513)
        values = self(grid)
        if abs(values[0]) > 1e-9 or abs(values[-1] - 1.0) > 1e-9:
            raise DataError(f"response {self.label} does not fix the endpoints")
        if not (np.diff(values) > 0).all():
            raise DataError(f"response {self.label} is not strictly increasing")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.family == "identity":
            return x.copy()
        if self.family == "gamma":
            return x ** self.params[0]
        strength, pivot = self.params
        return x + strength * x * (1.0 - x) * (x - pivot)

    @property
    def label(self) -> str:
        if self.family == "identity":
            return "identity"
        if self.family == "gamma":
            return f"gamma:{self.params[0]:g}"
        return f"cubic:{self.params[0]:g},{self.params[1]:g}"


def gamma_response(exponent: float) -> ResponseFunction:
    if exponent <= 0:
        raise DataError("gamma exponent must be positive")
    return ResponseFunction("gamma", (float(exponent),))


def cubic_response(strength: float, pivot: float) -> ResponseFunction:
    return ResponseFunction("cubic", (float(strength), float(pivot)))


def response_family() -> list[ResponseFunction]:
    """The shipped stand-in for a measured camera-response database.

    Gamma curves spanning strong brightening to strong darkening plus
    smooth monotone cubic perturbations of the identity.
    """
    gammas = [0.4, 0.55, 0.7, 0.85, 1.15, 1.4, 1.7, 2.0, 2.2, 2.5]
    cubics = [
        (0.8, 0.3),
        (0.8, 0.7),
        (-0.8, 0.5),
        (1.2, 0.5),
        (-0.6, 0.2),
        (0.5, 0.5),
        (-0.4, 0.8),
    ]
    family = [gamma_response(g) for g in gammas]
    family.extend(cubic_response(a, c) for a, c in cubics)
    return family


def apply_response(seq: ImageSequence, response: ResponseFunction) -> ImageSequence:
    """Distort every intensity by x -> 255 * f(x / 255)."""
    if seq.frames.size and seq.frames.max() > 255.0 + 1e-9:
        raise DataError("apply_response expects intensities in [0, 255]")
    distorted = 255.0 * response(seq.frames / 255.0)
    return ImageSequence(
        frames=distorted,
        timestamps=list(seq.timestamps),
        latitude=seq.latitude,
        longitude=seq.longitude,
        sky_mask=seq.sky_mask,
        force_lit=None if seq.force_lit is None else seq.force_lit.copy(),
    )


# ---------------------------------------------------------------------------
# Scene library


def _bilinear_resize(coarse: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    rows = np.linspace(0, coarse.shape[0] - 1, shape[0])
    cols = np.linspace(0, coarse.shape[1] - 1, shape[1])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _bilinear(coarse, rr.ravel(), cc.ravel()).reshape(shape)


def _smooth_field(rng, shape, low, high, coarse=9):
    base = rng.uniform(0.0, 1.0, size=(coarse, coarse))
    smooth = _bilinear_resize(base, shape)
    smooth = (smooth - smooth.min()) / max(smooth.max() - smooth.min(), 1e-12)
    return low + (high - low) * smooth


def wall_scene(size: int = 64, seed: int = 11, latitude: float = 38.63, longitude: float = -90.20) -> SyntheticScene:
    """A flat plane with a sharp east-west wall across part of the scene."""
    rng = np.random.default_rng(seed)
    height = np.zeros((size, size))
    wall_rows = slice(int(size * 0.45), int(size * 0.45) + max(2, size // 24))
    wall_cols = slice(int(size * 0.15), int(size * 0.85))
    height[wall_rows, wall_cols] = size / 8.0

    albedo = np.stack(
        [
            _smooth_field(rng, (size, size), 0.25, 0.70),
            _smooth_field(rng, (size, size), 0.25, 0.70),
            _smooth_field(rng, (size, size), 0.25, 0.70),
        ],
        axis=2,
    )
    albedo[wall_rows, wall_cols] = np.array([0.62, 0.45, 0.30])
    skylight = _smooth_field(rng, (size, size), 0.15, 0.30)
    return SyntheticScene(
        name="wall",
        heightfield=height,
        albedo_rgb=albedo,
        skylight=skylight,
        latitude=latitude,
        longitude=longitude,
    )


def boxes_scene(size: int = 64, seed: int = 23, latitude: float = 38.63, longitude: float = -90.20) -> SyntheticScene:
    """A small box city: rectangular blocks of varying heights on a plane."""
    rng = np.random.default_rng(seed)
    height = np.zeros((size, size))
    albedo = np.stack(
        [
            _smooth_field(rng, (size, size), 0.30, 0.65),
            _smooth_field(rng, (size, size), 0.30, 0.65),
            _smooth_field(rng, (size, size), 0.30, 0.65),
        ],
        axis=2,
    )
    extent_hi = max(4, size // 7)
    for _ in range(6):
        dr = int(rng.integers(3, extent_hi + 1))
        dc = int(rng.integers(3, extent_hi + 1))
        r = int(rng.integers(2, max(size - dr - 1, 3)))
        c = int(rng.integers(2, max(size - dc - 1, 3)))
        h = float(rng.uniform(2.0, max(2.5, size / 8.0)))
        height[r : r + dr, c : c + dc] = h
        albedo[r : r + dr, c : c + dc] = rng.uniform(0.25, 0.70, size=3)
    skylight = _smooth_field(rng, (size, size), 0.15, 0.30)
    return SyntheticScene(
        name="boxes",
        heightfield=height,
        albedo_rgb=albedo,
        skylight=skylight,
        latitude=latitude,
        longitude=longitude,
    )


def hills_scene(size: int = 64, seed: int = 37, latitude: float = 38.63, longitude: float = -90.20) -> SyntheticScene:
    """Smooth rolling terrain with moderate slopes."""
    rng = np.random.default_rng(seed)
    height = _smooth_field(rng, (size, size), 0.0, size / 7.0, coarse=7)
    height += _smooth_field(rng, (size, size), 0.0, size / 20.0, coarse=13)
    albedo = np.stack(
        [
            _smooth_field(rng, (size, size), 0.25, 0.70),
            _smooth_field(rng, (size, size), 0.25, 0.70),
            _smooth_field(rng, (size, size), 0.25, 0.70),
        ],
        axis=2,
    )
    skylight = _smooth_field(rng, (size, size), 0.15, 0.30)
    return SyntheticScene(
        name="hills",
        heightfield=height,
        albedo_rgb=albedo,
        skylight=skylight,
        latitude=latitude,
        longitude=longitude,
    )


SCENE_BUILDERS = {"wall": wall_scene, "boxes": boxes_scene, "hills": hills_scene}


def make_scene(name: str, size: int = 64, seed: int | None = None) -> SyntheticScene:
    """Build a shipped scene by name; unknown names raise DataError."""
    try:
        builder = SCENE_BUILDERS[name]
    except KeyError:
        raise DataError(
            f"unknown scene '{name}'; shipped scenes: {', '.join(sorted(SCENE_BUILDERS))}"
        ) from None
    if seed is None:
        return builder(size=size)
    return builder(size=size, seed=seed)


def scene_descriptor(name: str, size: int, seed: int | None = None) -> dict[str, str]:
    """Key-value descriptor from which a shipped scene can be rebuilt."""
    pairs = {"scene": name, "size": str(size)}
    if seed is not None:
        pairs["scene_seed"] = str(seed)
    return pairs


def scene_from_descriptor(pairs: dict[str, str]) -> SyntheticScene:
    """Rebuild a shipped scene from its descriptor (see scene_descriptor)."""
    try:
        name = pairs["scene"]
    except KeyError:
        raise DataError("scene descriptor is missing the 'scene' key") from None
    try:
        size = int(pairs.get("size", "64"))
        seed = int(pairs["scene_seed"]) if "scene_seed" in pairs else None
    except ValueError:
        raise DataError("scene descriptor has non-integer size or scene_seed") from None
    return make_scene(name, size=size, seed=seed)


# ---------------------------------------------------------------------------
# Sensitivity experiments


def shadow_accuracy(estimated: ShadowVolume, truth: ShadowVolume) -> float:
    """Fraction of (frame, pixel) labels matching the ground truth."""
    if estimated.labels.shape != truth.labels.shape:
        raise DataError("shadow volumes disagree on shape")
    return float((estimated.labels == truth.labels).mean())


def _em_accuracy(render: RenderedSequence, config: EmConfig | None = None):
    gray = to_grayscale(render.sequence)
    result = run_em(gray, render.lights, config)
    return shadow_accuracy(result.shadows, render.truth), result


@dataclass
class ResponseExperiment:
    """Shadow accuracy on clean data and after each response distortion."""

    clean_accuracy: float
    rows: list[tuple[str, float]]

    def drops(self) -> list[tuple[str, float]]:
        return [(label, self.clean_accuracy - acc) for label, acc in self.rows]


def response_experiment(
    scene: SyntheticScene,
    count: int = 300,
    seed: int = 0,
    family: list[ResponseFunction] | None = None,
    config: EmConfig | None = None,
) -> ResponseExperiment:
    """Distort one rendered sequence by every response curve and re-run EM."""
    family = response_family() if family is None else family
    render = render_sequence(scene, count, seed=seed)
    clean_accuracy, _ = _em_accuracy(render, config)
    rows = []
    for response in family:
        distorted = apply_response(render.sequence, response)
        gray = to_grayscale(distorted)
        result = run_em(gray, render.lights, config)
        rows.append((response.label, shadow_accuracy(result.shadows, render.truth)))
        log.info("response %-16s accuracy %.4f", response.label, rows[-1][1])
    return ResponseExperiment(clean_accuracy=clean_accuracy, rows=rows)


@dataclass
class SubsampleGrid:
    """Accuracy over (frame count, time span) cells, several trials each.

    accuracies[i][j] lists per-trial accuracies for counts[i] x spans[j],
    or None when the window cannot supply that many daylight instants.
    """

    counts: list[int]
    spans_days: list[float]
    accuracies: list[list[list[float] | None]]

    def cell_median(self, i: int, j: int) -> float:
        cell = self.accuracies[i][j]
        if cell is None:
            return float("nan")
        return float(np.median(cell))

    def cell_mean(self, i: int, j: int) -> float:
        cell = self.accuracies[i][j]
        if cell is None:
            return float("nan")
        return float(np.mean(cell))


def subsample_experiment(
    scene: SyntheticScene,
    counts: list[int],
    spans_days: list[float],
    trials: int = 10,
    seed: int = 0,
    start: datetime | None = None,
    config: EmConfig | None = None,
) -> SubsampleGrid:
    """Accuracy as the number of frames and captured time span vary.

    Each (count, span, trial) draws its own frame sample from a seeded
    stream, renders, runs EM, and scores against the exact ground truth.
    """
    if not counts or not spans_days:
        raise DataError("counts and spans_days must be nonempty")
    if trials < 1:
        raise DataError("trials must be >= 1")
    grid: list[list[list[float] | None]] = []
    for i, count in enumerate(counts):
        row: list[list[float] | None] = []
        for j, span in enumerate(spans_days):
            accuracies: list[float] | None = []
            for trial in range(trials):
                cell_seed = np.random.SeedSequence([int(seed), i, j, trial])
                try:
                    render = render_sequence(
                        scene, count, seed=cell_seed, start=start, span_days=span
                    )
                except DataError:
                    accuracies = None
                    break
                accuracy, _ = _em_accuracy(render, config)
                accuracies.append(accuracy)
            if accuracies is None:
                log.info("subsample cell n=%d span=%.3gd infeasible", count, span)
            else:
                log.info(
                    "subsample cell n=%d span=%.3gd median %.4f",
                    count,
                    span,
                    float(np.median(accuracies)),
                )
            row.append(accuracies)
        grid.append(row)
    return SubsampleGrid(counts=list(counts), spans_days=list(spans_days), accuracies=grid)
