"""Persistence for sequences, masks, volumes, model maps, and reports.

Conventions used throughout:
  - sequence manifest: line-oriented text, `key: value` headers
    (version, latitude, longitude, sky_mask) followed by one
    `image,timestamp` row per frame (ISO-8601 UTC timestamps);
  - sky masks: PGM/PNG, 255 marks scene pixels, 0 marks sky;
  - shadow masks: one PGM per frame, 255 lit, 0 shadow, 128 sky;
  - label masks: 255 lit, 0 shadow, anything else unknown;
  - model maps: raw little-endian float32 planes plus a text header,
    with NaN marking undefined (rank-deficient or sky) pixels.

Every save/load pair round-trips in-range data exactly, and loaders turn
structural inconsistencies into distinct error types rather than
truncating.
"""

from __future__ import annotations

import csv
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import LIT, SHADOW, UNKNOWN, ImageSequence, LabelMaskSet, PixelModel, ShadowVolume
from .errors import (
    DataError,
    DimensionMismatchError,
    ManifestError,
    MissingFileError,
    UnreadableFileError,
)
from .metrics import ScoreRow

MANIFEST_NAME = "manifest.txt"
VOLUME_HEADER_NAME = "shadow_volume.txt"
MODEL_HEADER_NAME = "model.txt"
SKY_SCENE = 255
SKY_VALUE = 128


# ---------------------------------------------------------------------------
# Low-level image codecs


def write_pgm(path: Path | str, array: np.ndarray):
    """Write an 8-bit grayscale array as binary PGM (P5)."""
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim != 2:
        raise DataError("PGM arrays must be 2-D")
    height, width = array.shape
    with open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(array.tobytes())


def read_pgm(path: Path | str) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) PGM with maxval <= 255."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    data = path.read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if len(fields) < 4:
        raise UnreadableFileError(f"truncated PGM header: {path}")
    magic = fields[0]
    try:
        width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise UnreadableFileError(f"bad PGM header: {path}") from None
    if maxval > 255 or maxval < 1:
        raise UnreadableFileError(f"unsupported PGM maxval {maxval}: {path}")
    if magic == b"P5":
        raster = data[pos + 1 : pos + 1 + width * height]
        if len(raster) < width * height:
            raise UnreadableFileError(f"truncated PGM raster: {path}")
        return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()
    if magic == b"P2":
        values = data[pos:].split()
        if len(values) < width * height:
            raise UnreadableFileError(f"truncated PGM raster: {path}")
        flat = np.array([int(v) for v in values[: width * height]], dtype=np.uint8)
        return flat.reshape(height, width)
    raise UnreadableFileError(f"not a PGM file: {path}")


def _read_image(path: Path) -> np.ndarray:
    """Read a PNG/PPM/PGM image as uint8, (H, W) or (H, W, 3)."""
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I;16", "I"):
                return np.asarray(img.convert("L"), dtype=np.uint8)
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnreadableFileError(f"cannot decode image: {path}") from exc
    except OSError as exc:
        raise UnreadableFileError(f"cannot read image: {path}") from exc


def _write_image(path: Path, array: np.ndarray):
    array = np.asarray(array, dtype=np.uint8)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, array)
        return
    mode = "L" if array.ndim == 2 else "RGB"
    Image.fromarray(array, mode=mode).save(path)


# ---------------------------------------------------------------------------
# Key-value text files


def write_key_value(path: Path | str, pairs: dict[str, str]):
    with open(path, "w", encoding="ascii") as handle:
        for key, value in pairs.items():
            handle.write(f"{key}: {value}\n")


def read_key_value(path: Path | str) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    pairs: dict[str, str] = {}
    for line in path.read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise UnreadableFileError(f"bad key-value line in {path}: {line!r}")
        key, value = line.split(":", 1)
        pairs[key.strip()] = value.strip()
    return pairs


# ---------------------------------------------------------------------------
# Sequence manifests


def _format_timestamp(instant: datetime) -> str:
    return instant.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_timestamp(text: str) -> datetime:
    try:
        parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ManifestError(f"bad timestamp: {text!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def save_sequence(seq: ImageSequence, out_dir: Path | str, stem: str = "frame") -> Path:
    """Write frames (8-bit PNG), the sky mask (PGM), and a manifest.

    Intensities are rounded and clipped to [0, 255]; sequences already in
    that range round-trip exactly. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask_name = "mask.pgm"
    write_pgm(out_dir / mask_name, np.where(seq.sky_mask, SKY_SCENE, 0).astype(np.uint8))

    rows = []
    for i in range(seq.n_frames):
        name = f"{stem}_{i:04d}.png"
        grid_shape = (seq.height, seq.width) + (() if seq.is_grayscale else (3,))
        grid = np.zeros(grid_shape, dtype=np.uint8)
        values = np.clip(np.round(seq.frames[i]), 0, 255).astype(np.uint8)
        grid[seq.sky_mask] = values
        _write_image(out_dir / name, grid)
        rows.append(f"{name},{_format_timestamp(seq.timestamps[i])}")

    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w", encoding="ascii") as handle:
        handle.write("version: 1\n")
        handle.write(f"latitude: {seq.latitude!r}\n")
        handle.write(f"longitude: {seq.longitude!r}\n")
        handle.write(f"sky_mask: {mask_name}\n")
        for row in rows:
            handle.write(row + "\n")
    return manifest


def load_sequence(manifest_path: Path | str) -> ImageSequence:
    """Load a sequence described by a manifest; see the module docstring.

    Raises ManifestError, MissingFileError, UnreadableFileError,
    DimensionMismatchError, or TimestampOrderError as the failure demands.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"missing file: {manifest_path}")
    base = manifest_path.parent

    headers: dict[str, str] = {}
    rows: list[tuple[str, datetime]] = []
    for line in manifest_path.read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "," in line:
            name, _, stamp = line.partition(",")
            rows.append((name.strip(), _parse_timestamp(stamp.strip())))
        elif ":" in line:
            key, _, value = line.partition(":")
            headers[key.strip()] = value.strip()
        else:
            raise ManifestError(f"unparseable manifest line: {line!r}")

    for key in ("latitude", "longitude", "sky_mask"):
        if key not in headers:
            raise ManifestError(f"manifest missing '{key}' header")
    try:
        latitude = float(headers["latitude"])
        longitude = float(headers["longitude"])
    except ValueError:
        raise ManifestError("latitude/longitude must be decimal degrees") from None
    if not rows:
        raise ManifestError("manifest lists no frames")

    mask_img = _read_image(base / headers["sky_mask"])
    if mask_img.ndim != 2:
        raise UnreadableFileError("sky mask must be a grayscale image")
    sky_mask = mask_img > 127

    frames = None
    for i, (name, _) in enumerate(rows):
        image = _read_image(base / name)
        if image.shape[:2] != sky_mask.shape:
            raise DimensionMismatchError(
                f"frame {name} is {image.shape[:2]}, sky mask is {sky_mask.shape}"
            )
        if frames is None:
            channels = () if image.ndim == 2 else (3,)
            frames = np.empty((len(rows), int(sky_mask.sum())) + channels)
        if (image.ndim == 2) != (frames.ndim == 2):
            raise DataError(f"frame {name} mixes grayscale and color frames")
        frames[i] = image[sky_mask].astype(np.float64)

    return ImageSequence(
        frames=frames,
        timestamps=[stamp for _, stamp in rows],
        latitude=latitude,
        longitude=longitude,
        sky_mask=sky_mask,
    )


# ---------------------------------------------------------------------------
# Shadow volumes and label masks


def _mask_frame_name(index: int) -> str:
    return f"shadow_{index:04d}.pgm"


def save_shadow_volume(volume: ShadowVolume, out_dir: Path | str) -> Path:
    """One PGM per frame (255 lit / 0 shadow / 128 sky) plus a header file."""
    if volume.n_frames == 0:
        raise DataError("refusing to save an empty shadow volume")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(volume.n_frames):
        grid = np.full(volume.sky_mask.shape, SKY_VALUE, dtype=np.uint8)
        grid[volume.sky_mask] = np.where(volume.labels[i] == 1, 255, 0)
        write_pgm(out_dir / _mask_frame_name(i), grid)
    header = out_dir / VOLUME_HEADER_NAME
    write_key_value(
        header,
        {
            "version": "1",
            "frames": str(volume.n_frames),
            "pixels": str(volume.n_pixels),
            "width": str(volume.sky_mask.shape[1]),
            "height": str(volume.sky_mask.shape[0]),
        },
    )
    return header


def load_shadow_volume(in_dir: Path | str) -> ShadowVolume:
    """Inverse of save_shadow_volume; header/frame mismatches are errors."""
    in_dir = Path(in_dir)
    header = read_key_value(in_dir / VOLUME_HEADER_NAME)
    try:
        n = int(header["frames"])
        p = int(header["pixels"])
        width = int(header["width"])
        height = int(header["height"])
    except (KeyError, ValueError):
        raise UnreadableFileError(f"bad shadow volume header in {in_dir}") from None

    sky_mask = None
    labels = None
    for i in range(n):
        grid = read_pgm(in_dir / _mask_frame_name(i))
        if grid.shape != (height, width):
            raise DimensionMismatchError(
                f"{_mask_frame_name(i)} is {grid.shape}, header says {(height, width)}"
            )
        frame_mask = grid != SKY_VALUE
        if sky_mask is None:
            sky_mask = frame_mask
            if int(sky_mask.sum()) != p:
                raise DimensionMismatchError(
                    f"mask marks {int(sky_mask.sum())} pixels, header says {p}"
                )
            labels = np.empty((n, p), dtype=np.uint8)
        elif not np.array_equal(frame_mask, sky_mask):
            raise DataError(f"{_mask_frame_name(i)} disagrees on the sky mask")
        values = grid[sky_mask]
        bad = ~np.isin(values, (0, 255))
        if bad.any():
            raise UnreadableFileError(
                f"{_mask_frame_name(i)} holds non-binary scene values"
            )
        labels[i] = values == 255
    return ShadowVolume(
        labels=labels,
        converged=np.ones(p, dtype=bool),
        sky_mask=sky_mask,
    )


def save_label_masks(labels: LabelMaskSet, out_dir: Path | str, stem: str = "label"):
    """Ternary masks as PGMs: 255 lit, 0 shadow, 128 unknown."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lut = {LIT: 255, SHADOW: 0, UNKNOWN: SKY_VALUE}
    for index in labels.frame_indices():
        mask = labels.masks[index]
        grid = np.full(mask.shape, SKY_VALUE, dtype=np.uint8)
        for code, value in lut.items():
            grid[mask == code] = value
        write_pgm(out_dir / f"{stem}_{index:04d}.pgm", grid)


def _trailing_index(stem: str) -> int | None:
    digits = ""
    for ch in reversed(stem):
        if ch.isdigit():
            digits = ch + digits
        else:
            break
    return int(digits) if digits else None


def load_label_masks(in_dir: Path | str) -> LabelMaskSet:
    """Load every *.pgm/*.png in a directory as ternary labels.

    The trailing integer in each filename is the frame index. 255 reads as
    lit and 0 as shadow; any other gray value marks an unlabeled pixel.
    Shadow-volume frame masks written by save_shadow_volume load the same
    way, so exact ground-truth volumes can serve as labels directly.
    """
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise MissingFileError(f"missing directory: {in_dir}")
    masks: dict[int, np.ndarray] = {}
    for path in sorted(in_dir.iterdir()):
        if path.suffix.lower() not in (".pgm", ".png"):
            continue
        index = _trailing_index(path.stem)
        if index is None:
            continue
        grid = _read_image(path)
        if grid.ndim != 2:
            raise UnreadableFileError(f"label mask must be grayscale: {path}")
        mask = np.full(grid.shape, UNKNOWN, dtype=np.int8)
        mask[grid == 255] = LIT
        mask[grid == 0] = SHADOW
        masks[index] = mask
    if not masks:
        raise DataError(f"no label masks found in {in_dir}")
    return LabelMaskSet(masks=masks)


# ---------------------------------------------------------------------------
# Model maps


def write_float_plane(path: Path | str, array: np.ndarray):
    """Raw little-endian float32 dump, row-major."""
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def read_float_plane(path: Path | str, shape: tuple[int, ...]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    expected = int(np.prod(shape))
    flat = np.fromfile(path, dtype="<f4")
    if flat.size != expected:
        raise UnreadableFileError(
            f"{path} holds {flat.size} floats, expected {expected}"
        )
    return flat.reshape(shape)


def _normal_colormap(normals_grid: np.ndarray) -> np.ndarray:
    """Hue codes geographic orientation, lightness the angle from zenith.

    Up-facing normals render at maximal lightness (white); undefined (NaN)
    normals render black.
    """
    h_dim, w_dim = normals_grid.shape[:2]
    east = normals_grid[:, :, 0]
    north = normals_grid[:, :, 1]
    up = normals_grid[:, :, 2]
    defined = np.isfinite(normals_grid).all(axis=2)

    hue = np.mod(np.arctan2(east, north), 2.0 * np.pi) / (2.0 * np.pi)
    tilt = np.degrees(np.arccos(np.clip(up, -1.0, 1.0)))
    light = 1.0 - tilt / 180.0

    # HSL -> RGB with saturation 1.
    chroma = 1.0 - np.abs(2.0 * light - 1.0)
    sector = hue * 6.0
    x = chroma * (1.0 - np.abs(np.mod(sector, 2.0) - 1.0))
    zero = np.zeros_like(chroma)
    r = np.select(
        [sector < 1, sector < 2, sector < 3, sector < 4, sector < 5],
        [chroma, x, zero, zero, x],
        chroma,
    )
    g = np.select(
        [sector < 1, sector < 2, sector < 3, sector < 4, sector < 5],
        [x, chroma, chroma, x, zero],
        zero,
    )
    b = np.select(
        [sector < 1, sector < 2, sector < 3, sector < 4, sector < 5],
        [zero, zero, x, chroma, chroma],
        x,
    )
    m = light - chroma / 2.0
    rgb = np.stack([r + m, g + m, b + m], axis=2)
    rgb[~defined] = 0.0
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def save_model(model: PixelModel, out_dir: Path | str) -> Path:
    """Write albedo/normal/skylight maps.

    Albedo goes out as a rescaled 8-bit PNG with the scale recorded in the
    header; normals and skylight as raw float32 planes (NaN marks sky and
    rank-deficient pixels); normals also as the hue-coded visualization.
    Returns the header path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sky = model.sky_mask
    height, width = sky.shape

    def to_grid(values, channels=()):
        grid = np.full((height, width) + channels, np.nan)
        grid[sky] = values
        return grid

    normals_grid = to_grid(model.normal, (3,))
    skylight_grid = to_grid(model.skylight)
    gray_grid = to_grid(model.gray_albedo)
    write_float_plane(out_dir / "normals.f32", normals_grid)
    write_float_plane(out_dir / "skylight.f32", skylight_grid)
    write_float_plane(out_dir / "gray_albedo.f32", gray_grid)

    if model.albedo_rgb is not None:
        albedo_grid = to_grid(model.albedo_rgb, (3,))
    else:
        albedo_grid = np.repeat(gray_grid[:, :, None], 3, axis=2)
    finite = albedo_grid[np.isfinite(albedo_grid)]
    peak = float(finite.max()) if finite.size else 0.0
    scale = 255.0 / peak if peak > 0 else 1.0
    albedo_png = np.zeros((height, width, 3), dtype=np.uint8)
    valid = np.isfinite(albedo_grid).all(axis=2)
    albedo_png[valid] = np.clip(np.round(albedo_grid[valid] * scale), 0, 255).astype(np.uint8)
    _write_image(out_dir / "albedo.png", albedo_png)

    _write_image(out_dir / "normals_vis.png", _normal_colormap(normals_grid))
    write_pgm(out_dir / "mask.pgm", np.where(sky, SKY_SCENE, 0).astype(np.uint8))

    header = out_dir / MODEL_HEADER_NAME
    write_key_value(
        header,
        {
            "version": "1",
            "width": str(width),
            "height": str(height),
            "normals": "normals.f32 (float32 LE, row-major, channels east,north,up)",
            "skylight": "skylight.f32 (float32 LE, row-major)",
            "gray_albedo": "gray_albedo.f32 (float32 LE, row-major)",
            "albedo_scale": repr(scale),
        },
    )
    return header


def read_model_planes(in_dir: Path | str) -> dict[str, np.ndarray]:
    """Read back the float planes written by save_model."""
    in_dir = Path(in_dir)
    header = read_key_value(in_dir / MODEL_HEADER_NAME)
    try:
        width = int(header["width"])
        height = int(header["height"])
    except (KeyError, ValueError):
        raise UnreadableFileError(f"bad model header in {in_dir}") from None
    return {
        "normals": read_float_plane(in_dir / "normals.f32", (height, width, 3)),
        "skylight": read_float_plane(in_dir / "skylight.f32", (height, width)),
        "gray_albedo": read_float_plane(in_dir / "gray_albedo.f32", (height, width)),
        "albedo_scale": np.float64(float(header.get("albedo_scale", "1.0"))),
    }


# ---------------------------------------------------------------------------
# Scene descriptors


def save_scene_descriptor(path: Path | str, pairs: dict[str, str]):
    """Plain-text key-value descriptor; `scene`, `size`, and optionally
    `scene_seed` rebuild the scene, extra keys record how it was rendered."""
    write_key_value(path, pairs)


def load_scene_descriptor(path: Path | str) -> dict[str, str]:
    return read_key_value(path)


# ---------------------------------------------------------------------------
# Score CSVs


def write_score_csv(rows: list[ScoreRow], path: Path | str):
    """algorithm,strategy,scene,accuracy_percent with round-trip floats."""
    with open(path, "w", newline="", encoding="ascii") as handle:
        writer = csv.writer(handle)
        writer.writerow(["algorithm", "strategy", "scene", "accuracy_percent"])
        for row in rows:
            writer.writerow([row.algorithm, row.strategy, row.scene, repr(row.accuracy_percent)])


def read_score_csv(path: Path | str) -> list[ScoreRow]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    rows = []
    with open(path, newline="", encoding="ascii") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["algorithm", "strategy", "scene", "accuracy_percent"]:
            raise UnreadableFileError(f"unexpected score CSV header in {path}: {header}")
        for record in reader:
            if len(record) != 4:
                raise UnreadableFileError(f"malformed score CSV row in {path}: {record}")
            try:
                accuracy = float(record[3])
            except ValueError:
                raise UnreadableFileError(f"bad accuracy in {path}: {record[3]!r}") from None
            rows.append(ScoreRow(record[0], record[1], record[2], accuracy))
    return rows
