"""
Importance scores for pruning decisions.

Two scorers are provided: plain magnitude and relative importance (RIA),
which adds a weight's share of its row and column L1 sums and multiplies by
an activation-norm factor. Channel equalization rescales weights by
s_j = max|x_j| / max|W_:,j| before scoring; the rescaled matrix only ever
feeds a scorer, never the stored weights.

All scores are float64. Sums use numpy's pairwise reduction along a fixed
axis, so results do not depend on thread count.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ShapeError
from .tensor_core import ChannelStats, WeightMatrix

logger = logging.getLogger(__name__)

DEFAULT_CLAMP_MIN = 1e-8
DEFAULT_ACTIVATION_POWER = 0.5
SCORERS = ("magnitude", "ria")


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Non-negative per-weight importance, same shape as the weights."""

    data: np.ndarray

    def __post_init__(self):
        array = np.array(self.data, dtype=np.float64)
        if array.ndim != 2:
            raise ShapeError(f"ScoreMatrix must be 2-D, got shape {array.shape}")
        if np.any(array < 0) or not np.all(np.isfinite(array)):
            raise ValueError("Scores must be non-negative and finite")
        array.setflags(write=False)
        object.__setattr__(self, "data", array)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class EqualizationScales:
    """Per input channel scale s_j > 0."""

    scales: np.ndarray

    def __post_init__(self):
        vector = np.array(self.scales, dtype=np.float64)
        if vector.ndim != 1:
            raise ShapeError("Scales must be a vector")
        if np.any(vector <= 0) or not np.all(np.isfinite(vector)):
            raise ValueError("Scales must be strictly positive and finite")
        vector.setflags(write=False)
        object.__setattr__(self, "scales", vector)

    def __len__(self) -> int:
        return self.scales.shape[0]


def _check_stats(w: WeightMatrix, stats: ChannelStats):
    if stats.cols != w.cols:
        raise ShapeError(f"Channel stats cover {stats.cols} channels, weights have {w.cols}")


def magnitude_scores(w: WeightMatrix) -> ScoreMatrix:
    return ScoreMatrix(np.abs(w.as_float64()))


def equalization_scales(
    w: WeightMatrix, stats: ChannelStats, clamp_min: float = DEFAULT_CLAMP_MIN
) -> EqualizationScales:
    """s_j = max|x_j| / max_i |W_ij| with both sides clamped below by ``clamp_min``."""
    _check_stats(w, stats)
    weight_max = np.abs(w.as_float64()).max(axis=0) if w.rows else np.zeros(w.cols)
    dead = int(np.sum(stats.abs_max < clamp_min))
    if dead:
        logger.warning("%d input channels have no activation signal, clamping to %g", dead, clamp_min)
    return EqualizationScales(np.maximum(stats.abs_max, clamp_min) / np.maximum(weight_max, clamp_min))


def equalize_for_scoring(w: WeightMatrix, scales: EqualizationScales) -> WeightMatrix:
    """W_ec = W · diag(s)^-1, for scoring only."""
    if len(scales) != w.cols:
        raise ShapeError(f"{len(scales)} scales for {w.cols} columns")
    return WeightMatrix(w.as_float64() / scales.scales)


def ria_scores(
    w: WeightMatrix,
    stats: ChannelStats,
    activation_power: float = DEFAULT_ACTIVATION_POWER,
    clamp_min: float = DEFAULT_CLAMP_MIN,
    use_activation: bool = True,
) -> ScoreMatrix:
    """Relative importance with activation factor.

    score_ij = (|W_ij| / sum_j' |W_ij'| + |W_ij| / sum_i' |W_i'j|) * ||X_j||_2 ** a

    Zero row or column sums are clamped to ``clamp_min``. With
    ``use_activation=False`` the factor is 1.
    """
    _check_stats(w, stats)
    if activation_power < 0:
        raise ValueError(f"activation_power must be non-negative, got {activation_power}")
    magnitude = np.abs(w.as_float64())
    row_sum = np.maximum(magnitude.sum(axis=1, keepdims=True), clamp_min)
    col_sum = np.maximum(magnitude.sum(axis=0, keepdims=True), clamp_min)
    relative = magnitude / row_sum + magnitude / col_sum
    if use_activation:
        relative = relative * stats.l2_norm[np.newaxis, :] ** activation_power
    return ScoreMatrix(relative)


def score_layer(
    w: WeightMatrix,
    stats: ChannelStats,
    scorer: str = "ria",
    equalize: bool = False,
    activation_power: float = DEFAULT_ACTIVATION_POWER,
    clamp_min: float = DEFAULT_CLAMP_MIN,
    use_activation: bool = True,
) -> Tuple[ScoreMatrix, Optional[EqualizationScales]]:
    """Optionally equalize, then score.

    Activation statistics are never rescaled, so the equalization only moves
    importance between weight columns.
    """
    if scorer not in SCORERS:
        raise ValueError(f"Invalid scorer '{scorer}'. Valid options: {', '.join(SCORERS)}")
    scales = None
    target = w
    if equalize:
        scales = equalization_scales(w, stats, clamp_min)
        target = equalize_for_scoring(w, scales)
    if scorer == "magnitude":
        return magnitude_scores(target), scales
    return ria_scores(target, stats, activation_power, clamp_min, use_activation), scales
