"""Domain types shared by every stage of the pipeline.

Image data lives in flat per-pixel arrays covering only the non-sky pixels
of the camera grid; the sky mask maps them back to image coordinates.
Intensities are stored as real numbers so that saturation repair can write
values above 255 without clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import DataError, DimensionMismatchError, TimestampOrderError

# ITU-R BT.601 luma weights used for every grayscale conversion.
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Ternary ground-truth label codes.
LIT = 1
SHADOW = 0
UNKNOWN = -1


def ensure_utc(instant: datetime) -> datetime:
    """Normalize a timestamp to timezone-aware UTC (naive means UTC)."""
    if instant.tzinfo is None:
        return instant.replace(tzinfo=timezone.utc)
    return instant.astimezone(timezone.utc)


@dataclass
class ImageSequence:
    """A registered time-lapse: n frames over the p non-sky pixels.

    frames      -- (n, p) grayscale or (n, p, 3) RGB intensities, float64
    timestamps  -- n UTC instants, strictly increasing
    latitude    -- camera latitude in degrees, [-90, 90]
    longitude   -- camera longitude in degrees, [-180, 180]
    sky_mask    -- (height, width) bool, True where the pixel shows scene
    force_lit   -- optional (p,) bool set by saturation repair; those pixels
                   are pinned to the directly-lit label during EM
    """

    frames: np.ndarray
    timestamps: list[datetime]
    latitude: float
    longitude: float
    sky_mask: np.ndarray
    force_lit: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim not in (2, 3):
            raise DataError(f"frames must be (n, p) or (n, p, 3), got shape {self.frames.shape}")
        if self.frames.ndim == 3 and self.frames.shape[2] != 3:
            raise DataError(f"color frames must have 3 channels, got {self.frames.shape[2]}")
        self.sky_mask = np.asarray(self.sky_mask, dtype=bool)
        if self.sky_mask.ndim != 2:
            raise DataError("sky_mask must be a 2-D boolean map")
        p = int(self.sky_mask.sum())
        if self.frames.shape[1] != p:
            raise DimensionMismatchError(
                f"frames cover {self.frames.shape[1]} pixels but sky_mask marks {p}"
            )
        if len(self.timestamps) != self.frames.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.timestamps)} timestamps for {self.frames.shape[0]} frames"
            )
        self.timestamps = [ensure_utc(t) for t in self.timestamps]
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b <= a:
                raise TimestampOrderError(f"timestamps not strictly increasing at {b.isoformat()}")
        if not (-90.0 <= self.latitude <= 90.0):
            raise DataError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise DataError(f"longitude {self.longitude} outside [-180, 180]")
        if self.frames.size and not np.isfinite(self.frames).all():
            raise DataError("frames contain non-finite intensities")
        if self.frames.size and self.frames.min() < 0.0:
            raise DataError("frames contain negative intensities")
        if self.force_lit is not None:
            self.force_lit = np.asarray(self.force_lit, dtype=bool)
            if self.force_lit.shape != (p,):
                raise DimensionMismatchError("force_lit length must equal pixel count")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.frames.shape[1]

    @property
    def height(self) -> int:
        return self.sky_mask.shape[0]

    @property
    def width(self) -> int:
        return self.sky_mask.shape[1]

    @property
    def is_grayscale(self) -> bool:
        return self.frames.ndim == 2

    def pixel_coordinates(self) -> np.ndarray:
        """(p, 2) array of (row, col) grid coordinates, row-major order."""
        rows, cols = np.nonzero(self.sky_mask)
        return np.stack([rows, cols], axis=1)

    def to_grid(self, values: np.ndarray, fill=np.nan) -> np.ndarray:
        """Scatter a per-pixel array back onto the (height, width) grid."""
        values = np.asarray(values)
        if values.shape[0] != self.n_pixels:
            raise DimensionMismatchError("per-pixel array has wrong length")
        shape = (self.height, self.width) + values.shape[1:]
        grid = np.full(shape, fill, dtype=values.dtype if values.dtype.kind == "f" else float)
        grid[self.sky_mask] = values
        return grid


def to_grayscale(seq: ImageSequence) -> ImageSequence:
    """Collapse RGB frames to BT.601 luma; single-channel input passes through."""
    if seq.is_grayscale:
        return seq
    gray = seq.frames @ GRAY_WEIGHTS
    return ImageSequence(
        frames=gray,
        timestamps=list(seq.timestamps),
        latitude=seq.latitude,
        longitude=seq.longitude,
        sky_mask=seq.sky_mask,
        force_lit=None if seq.force_lit is None else seq.force_lit.copy(),
    )


@dataclass
class ShadowVolume:
    """Binary sunlit-or-not labels for every (frame, pixel) pair.

    labels    -- (n, p) uint8 in {0, 1}; 1 means directly lit
    converged -- (p,) bool, per-pixel EM convergence flag
    sky_mask  -- grid geometry shared with the owning ImageSequence
    """

    labels: np.ndarray
    converged: np.ndarray
    sky_mask: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise DataError("labels must be an (n, p) array")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise DataError("shadow labels must be exactly 0 or 1")
        self.sky_mask = np.asarray(self.sky_mask, dtype=bool)
        p = int(self.sky_mask.sum())
        if self.labels.shape[1] != p:
            raise DimensionMismatchError(
                f"labels cover {self.labels.shape[1]} pixels but sky_mask marks {p}"
            )
        self.converged = np.asarray(self.converged, dtype=bool)
        if self.converged.shape != (p,):
            raise DimensionMismatchError("converged length must equal pixel count")

    @property
    def n_frames(self) -> int:
        return self.labels.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.labels.shape[1]


@dataclass
class PixelModel:
    """Per-pixel Lambertian model with a skylight term.

    aux holds the raw least-squares unknowns (a, b, c, d) where
    (a, b, c) = gray_albedo * normal and d = gray_albedo * skylight.
    Pixels whose system stayed singular carry NaN throughout; pixels whose
    gray albedo vanished keep aux but have NaN normal and skylight.
    """

    aux: np.ndarray           # (p, 4) float64
    gray_albedo: np.ndarray   # (p,)
    normal: np.ndarray        # (p, 3) unit vectors, East-North-Up
    skylight: np.ndarray      # (p,)
    sky_mask: np.ndarray
    albedo_rgb: np.ndarray | None = None  # (p, 3), set by color finalization

    def __post_init__(self):
        p = int(np.asarray(self.sky_mask, dtype=bool).sum())
        for name in ("aux", "gray_albedo", "normal", "skylight"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if arr.shape[0] != p:
                raise DimensionMismatchError(f"{name} length must equal pixel count")
        self.sky_mask = np.asarray(self.sky_mask, dtype=bool)
        if self.albedo_rgb is not None:
            self.albedo_rgb = np.asarray(self.albedo_rgb, dtype=np.float64)
            if self.albedo_rgb.shape != (p, 3):
                raise DimensionMismatchError("albedo_rgb must be (p, 3)")

    @property
    def n_pixels(self) -> int:
        return self.aux.shape[0]

    def defined(self) -> np.ndarray:
        """(p,) bool: pixels with a usable normal/skylight estimate."""
        return np.isfinite(self.normal).all(axis=1) & np.isfinite(self.skylight)


@dataclass
class LightingTable:
    """Per-frame unit sun directions in East-North-Up coordinates."""

    directions: np.ndarray     # (n, 3)
    above_horizon: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.above_horizon = np.asarray(self.above_horizon, dtype=bool)
        if self.directions.ndim != 2 or self.directions.shape[1] != 3:
            raise DataError("directions must be an (n, 3) array")
        if self.above_horizon.shape != (self.directions.shape[0],):
            raise DimensionMismatchError("above_horizon length must match directions")
        if self.directions.size:
            norms = np.linalg.norm(self.directions, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-9):
                raise DataError("sun directions must be unit length")

    @property
    def n_frames(self) -> int:
        return self.directions.shape[0]


@dataclass
class LabelMaskSet:
    """Sparse ternary ground truth: frame index -> (height, width) int8 map.

    Map values are LIT (1), SHADOW (0), or UNKNOWN (-1); sky pixels are
    UNKNOWN by construction.
    """

    masks: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        cleaned = {}
        shape = None
        for index, mask in self.masks.items():
            mask = np.asarray(mask, dtype=np.int8)
            if mask.ndim != 2:
                raise DataError("label masks must be 2-D")
            if shape is None:
                shape = mask.shape
            elif mask.shape != shape:
                raise DimensionMismatchError("label masks disagree on dimensions")
            if not np.isin(mask, (LIT, SHADOW, UNKNOWN)).all():
                raise DataError("label masks may only contain LIT/SHADOW/UNKNOWN")
            cleaned[int(index)] = mask
        self.masks = cleaned

    def __len__(self) -> int:
        return len(self.masks)

    def frame_indices(self) -> list[int]:
        return sorted(self.masks)
