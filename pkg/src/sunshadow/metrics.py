"""Scoring shadow volumes against ternary label masks.

Accuracy is the fraction of correctly classified labeled pixels, pooled
over all labeled frames (micro average); a per-frame macro average rides
along for transparency. UNKNOWN labels never enter the numerator or
denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import LIT, SHADOW, UNKNOWN, LabelMaskSet, ShadowVolume
from .errors import DataError, DimensionMismatchError

STRATEGY_ORDER = ("suggested", "global", "optimal")


@dataclass(frozen=True)
class ScoreRow:
    """One line of the report CSV: algorithm,strategy,scene,accuracy_percent."""

    algorithm: str
    strategy: str
    scene: str
    accuracy_percent: float


@dataclass
class FrameScore:
    frame_index: int
    matches: int
    labeled: int

    @property
    def accuracy(self) -> float:
        return self.matches / self.labeled if self.labeled else float("nan")


@dataclass
class AccuracyReport:
    """Scores for one (algorithm, strategy, scene) evaluation."""

    algorithm: str
    strategy: str
    scene: str
    matches: int
    labeled: int
    n_lit: int
    n_shadow: int
    n_unknown: int
    per_frame: list[FrameScore] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.matches / self.labeled

    @property
    def macro_accuracy(self) -> float:
        scored = [f.accuracy for f in self.per_frame if f.labeled]
        return float(np.mean(scored)) if scored else float("nan")

    def row(self) -> ScoreRow:
        return ScoreRow(
            algorithm=self.algorithm,
            strategy=self.strategy,
            scene=self.scene,
            accuracy_percent=100.0 * self.accuracy,
        )


def score(
    shadows: ShadowVolume,
    labels: LabelMaskSet,
    algorithm: str = "em",
    strategy: str = "all",
    scene: str = "",
) -> AccuracyReport:
    """Compare predicted labels to the ternary ground truth.

    Label frames pair with volume frames by index. Sky pixels and UNKNOWN
    labels are excluded; scoring zero labeled pixels is an error, never a
    NaN.
    """
    if not len(labels):
        raise DataError("label mask set is empty")
    matches = 0
    labeled = 0
    n_lit = n_shadow = n_unknown = 0
    per_frame = []
    for frame_index in labels.frame_indices():
        if not 0 <= frame_index < shadows.n_frames:
            raise DimensionMismatchError(
                f"label frame {frame_index} outside the volume's {shadows.n_frames} frames"
            )
        mask = labels.masks[frame_index]
        if mask.shape != shadows.sky_mask.shape:
            raise DimensionMismatchError("label mask and volume disagree on dimensions")
        predicted = np.full(mask.shape, UNKNOWN, dtype=np.int8)
        predicted[shadows.sky_mask] = shadows.labels[frame_index]
        known = (mask != UNKNOWN) & shadows.sky_mask
        frame_labeled = int(known.sum())
        frame_matches = int((predicted[known] == mask[known]).sum())
        matches += frame_matches
        labeled += frame_labeled
        n_lit += int((mask == LIT).sum())
        n_shadow += int((mask == SHADOW).sum())
        n_unknown += int((mask == UNKNOWN).sum())
        per_frame.append(FrameScore(frame_index, frame_matches, frame_labeled))
    if labeled == 0:
        raise DataError("no labeled pixels to score")
    return AccuracyReport(
        algorithm=algorithm,
        strategy=strategy,
        scene=scene,
        matches=matches,
        labeled=labeled,
        n_lit=n_lit,
        n_shadow=n_shadow,
        n_unknown=n_unknown,
        per_frame=per_frame,
    )


def _strategy_key(strategy: str) -> tuple[int, str]:
    try:
        return (STRATEGY_ORDER.index(strategy), strategy)
    except ValueError:
        return (len(STRATEGY_ORDER), strategy)


def sort_rows(rows: list[ScoreRow]) -> list[ScoreRow]:
    """Deterministic report order: algorithm, then strategy, then scene."""
    return sorted(rows, key=lambda r: (r.algorithm, _strategy_key(r.strategy), r.scene))


def table_report(rows: list[ScoreRow]) -> tuple[str, list[ScoreRow]]:
    """Render rows as an accuracy table (algorithms x strategies).

    Cells average across scenes (plain mean over scene rows). A strategy
    literally named "all" (the parameter-free estimator) fills every
    column. Returns the formatted text and the sorted input rows.
    """
    if not rows:
        raise DataError("no score rows to report")
    ordered = sort_rows(list(rows))
    algorithms = sorted({r.algorithm for r in ordered})
    strategies = [
        s
        for s in STRATEGY_ORDER
        if any(r.strategy == s for r in ordered)
    ] + sorted({r.strategy for r in ordered} - set(STRATEGY_ORDER) - {"all"})
    if not strategies:
        strategies = ["all"]

    def cell(algorithm: str, strategy: str) -> float:
        values = [r.accuracy_percent for r in ordered if r.algorithm == algorithm and r.strategy == strategy]
        if not values:
            values = [r.accuracy_percent for r in ordered if r.algorithm == algorithm and r.strategy == "all"]
        return float(np.mean(values)) if values else float("nan")

    width = max(12, max(len(a) for a in algorithms) + 2)
    header = "algorithm".ljust(width) + "".join(s.rjust(12) for s in strategies)
    lines = [header, "-" * len(header)]
    for algorithm in algorithms:
        line = algorithm.ljust(width)
        for strategy in strategies:
            value = cell(algorithm, strategy)
            line += (f"{value:.2f}" if np.isfinite(value) else "--").rjust(12)
        lines.append(line)
    scenes = sorted({r.scene for r in ordered if r.scene})
    if len(scenes) > 1:
        lines.append("")
        lines.append(f"(averaged over {len(scenes)} scenes: {', '.join(scenes)})")
    return "\n".join(lines) + "\n", ordered
