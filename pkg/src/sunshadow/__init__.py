"""Shadow, albedo, normal, and skylight estimation from outdoor time-lapses.

The estimator alternates per-pixel least-squares model fits against known
sun directions with residual-based shadow relabeling; see `em.run_em`.
Prior thresholding baselines, a synthetic-scene experiment suite, and the
evaluation harness live in `baselines`, `synth`, and `metrics`.
"""

from .core import (
    GRAY_WEIGHTS,
    LIT,
    SHADOW,
    UNKNOWN,
    ImageSequence,
    LabelMaskSet,
    LightingTable,
    PixelModel,
    ShadowVolume,
    to_grayscale,
)
from .em import EmConfig, EmResult, finalize_color, repair_saturation, run_em
from .solar import SolarQuery, lighting_table, solar_angles, sun_direction

__version__ = "0.1.0"

__all__ = [
    "GRAY_WEIGHTS",
    "LIT",
    "SHADOW",
    "UNKNOWN",
    "ImageSequence",
    "LabelMaskSet",
    "LightingTable",
    "PixelModel",
    "ShadowVolume",
    "to_grayscale",
    "EmConfig",
    "EmResult",
    "finalize_color",
    "repair_saturation",
    "run_em",
    "SolarQuery",
    "lighting_table",
    "solar_angles",
    "sun_direction",
    "__version__",
]
