"""
The four-stage pruning pipeline for one weight matrix.

Stages run in a fixed order:

1. equalization scales and the rescaled scoring matrix (optional),
2. scoring, salient extraction (K of every 256 columns) and N:M pruning of
   the remaining weights,
3. variance correction of the residual (optional),
4. masked reconstruction against calibration outputs (optional).

Equalization only changes scores. Stored residual and salient values always
come from the original matrix.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codec import MAX_BLOCK
from .config import PipelineConfig
from .errors import ConfigError, PatternError, ShapeError
from .importance import EqualizationScales, ScoreMatrix, score_layer
from .layer import PrunedLayer, SalientStore
from .patterns import NMMask, PatternShape
from .reconstruct import ReconstructionResult, reconstruct_layer
from .tensor_core import CalibrationSet, WeightMatrix, channel_stats, tensor_variance

logger = logging.getLogger(__name__)

__all__ = [
    "PipelineRun",
    "AblationRow",
    "ABLATION_LADDER",
    "extract_salient",
    "prune_residual",
    "variance_correct",
    "run_pipeline",
    "run_pipeline_detailed",
    "output_error",
    "ablation_grid",
    "unstructured_salient_shape",
]


def _check_scores(w: WeightMatrix, scores: ScoreMatrix):
    if scores.shape != w.shape:
        raise ShapeError(f"Score shape {scores.shape} differs from weight shape {w.shape}")


def _check_blocks(cols: int, shape: PatternShape):
    if cols % shape.m_block:
        raise ShapeError(f"{cols} columns are not divisible by block size {shape.m_block} ({shape})")


def _top_per_block(scores: np.ndarray, shape: PatternShape, excluded: Optional[np.ndarray] = None) -> np.ndarray:
    """Keep the N highest scores of every block; ties go to the lowest column."""
    rows, cols = scores.shape
    blocks = np.array(scores, dtype=np.float64).reshape(-1, shape.m_block)
    if excluded is not None:
        excluded_blocks = excluded.reshape(-1, shape.m_block)
        candidates = (~excluded_blocks).sum(axis=1)
        if candidates.size and candidates.min() < shape.n_keep:
            bad = int(np.argmin(candidates))
            raise PatternError(
                f"Block {bad} has {int(candidates[bad])} non-salient candidates, {shape} needs {shape.n_keep}"
            )
        blocks[excluded_blocks] = -np.inf
    order = np.argsort(-blocks, axis=1, kind="stable")[:, : shape.n_keep]
    keep = np.zeros(blocks.shape, dtype=bool)
    np.put_along_axis(keep, order, True, axis=1)
    return keep.reshape(rows, cols)


def unstructured_salient_shape(shape: PatternShape, cols: int) -> PatternShape:
    """Row-wide pattern keeping the same salient count as ``shape`` without block limits."""
    if cols > MAX_BLOCK:
        raise ConfigError(
            f"The unstructured salient layout spans the row and supports at most {MAX_BLOCK} columns, got {cols}"
        )
    if (shape.n_keep * cols) % shape.m_block:
        raise ShapeError(f"{cols} columns do not give a whole salient count for {shape}")
    return PatternShape(shape.n_keep * cols // shape.m_block, cols)


def _cap_per_residual_block(
    scores: np.ndarray, keep: np.ndarray, shape: PatternShape, residual_shape: PatternShape
) -> np.ndarray:
    """Limit salient picks to M - N per residual block, taking the next best score instead.

    Rows without an overfull residual block are returned unchanged.
    """
    cap = residual_shape.m_block - residual_shape.n_keep
    rows, cols = keep.shape
    if cols % residual_shape.m_block:
        raise ShapeError(f"{cols} columns are not divisible by block size {residual_shape.m_block}")
    counts = keep.reshape(rows, -1, residual_shape.m_block).sum(axis=2) if rows else np.zeros((0, 1))
    crowded = np.flatnonzero((counts > cap).any(axis=1))
    if crowded.size == 0:
        return keep
    keep = keep.copy()
    for r in crowded:
        taken = np.zeros(cols // residual_shape.m_block, dtype=np.int64)
        row = np.zeros(cols, dtype=bool)
        for start in range(0, cols, shape.m_block):
            chosen = 0
            for j in np.argsort(-scores[r, start:start + shape.m_block], kind="stable"):
                c = start + int(j)
                if taken[c // residual_shape.m_block] < cap:
                    row[c] = True
                    taken[c // residual_shape.m_block] += 1
                    chosen += 1
                    if chosen == shape.n_keep:
                        break
            if chosen < shape.n_keep:
                raise PatternError(
                    f"Row {r} columns {start}-{start + shape.m_block - 1} cannot hold {shape.n_keep} salient "
                    f"weights next to a {residual_shape} residual"
                )
        keep[r] = row
    logger.debug("moved salient picks in %d rows to respect %s", crowded.size, residual_shape)
    return keep


def extract_salient(
    w: WeightMatrix, scores: ScoreMatrix, shape: PatternShape, residual_shape: Optional[PatternShape] = None
) -> SalientStore:
    """Keep the K highest-scoring weights of every M-block as salient.

    Ties go to the lowest column index. The store holds the original values.
    With ``residual_shape`` no residual block gets more than M - N salient
    weights, so the residual pruning that follows always has N candidates;
    a pick that would overfill a block goes to the next highest score.
    """
    _check_scores(w, scores)
    _check_blocks(w.cols, shape)
    keep = _top_per_block(scores.data, shape)
    if residual_shape is not None:
        keep = _cap_per_residual_block(scores.data, keep, shape, residual_shape)
    store = SalientStore.from_dense(NMMask(shape, keep), w.data)
    logger.debug("extracted %d salient weights (%s)", store.count, shape)
    return store


def prune_residual(
    w: WeightMatrix, scores: ScoreMatrix, salient: Optional[SalientStore], shape: PatternShape
) -> Tuple[WeightMatrix, NMMask]:
    """N:M prune the non-salient weights.

    Salient positions never compete. Returns the residual (zeros at pruned
    and salient positions) and its mask.
    """
    _check_scores(w, scores)
    _check_blocks(w.cols, shape)
    excluded = None
    if salient is not None:
        if salient.mask.keep.shape != w.shape:
            raise ShapeError("Salient mask shape differs from weight shape")
        excluded = salient.mask.keep
    keep = _top_per_block(scores.data, shape, excluded)
    mask = NMMask(shape, keep)
    residual = WeightMatrix(np.where(keep, w.data, 0).astype(w.dtype))
    return residual, mask


def variance_correct(
    layer: PrunedLayer, dense_variance: float, epsilon: float = 1e-8, include_zeros: bool = True
) -> PrunedLayer:
    """Rescale residual values so the residual variance matches the dense one.

    f = sqrt(Var(W_dense) / (Var(residual) + epsilon)). With ``include_zeros``
    the variance covers the whole residual tensor, otherwise only kept values.
    Salient values are not touched. A dense variance of zero leaves the layer
    as is with factor 1.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    residual = layer.residual.as_float64()
    if include_zeros:
        residual_variance = tensor_variance(residual) if residual.size else 0.0
    else:
        kept = residual[layer.residual_mask.keep]
        residual_variance = tensor_variance(kept) if kept.size else 0.0
    denominator = residual_variance + epsilon
    if dense_variance <= 0 or denominator <= 0:
        logger.warning(
            "skipping variance correction (dense variance %g, residual variance %g)",
            dense_variance,
            residual_variance,
        )
        return layer.replace(correction_factor=1.0)
    factor = math.sqrt(dense_variance / denominator)
    logger.debug("variance correction factor %.6g", factor)
    corrected = WeightMatrix((residual * factor).astype(layer.residual.dtype))
    return layer.replace(residual=corrected, correction_factor=factor)


@dataclass(frozen=True, eq=False)
class PipelineRun:
    """Everything one pipeline run produced."""

    layer: PrunedLayer
    scales: Optional[EqualizationScales] = None
    reconstruction: Optional[ReconstructionResult] = None
    timings: Dict[str, float] = field(default_factory=dict)


def run_pipeline_detailed(w: WeightMatrix, calib: CalibrationSet, cfg: PipelineConfig) -> PipelineRun:
    """Run all enabled stages and keep the intermediate results."""
    if calib.cols != w.cols:
        raise ShapeError(f"Calibration has {calib.cols} channels, weights have {w.cols}")
    if w.cols % cfg.block_multiple:
        raise ShapeError(f"{w.cols} columns are not a multiple of {cfg.block_multiple} required by the config")

    timings = {}
    started = time.perf_counter()

    stats = channel_stats(calib)
    scores, scales = score_layer(
        w,
        stats,
        scorer=cfg.scorer,
        equalize=cfg.use_equalization,
        activation_power=cfg.activation_power,
        clamp_min=cfg.clamp_min,
        use_activation=cfg.ria_activation,
    )
    timings["score"] = time.perf_counter() - started

    mark = time.perf_counter()
    salient = None
    if cfg.salient_shape is not None:
        shape = cfg.salient_shape
        if cfg.salient_layout == "unstructured":
            shape = unstructured_salient_shape(shape, w.cols)
        salient = extract_salient(w, scores, shape, cfg.residual_shape)
    residual, mask = prune_residual(w, scores, salient, cfg.residual_shape)
    layer = PrunedLayer(residual, mask, salient, 1.0)
    timings["prune"] = time.perf_counter() - mark

    if cfg.use_variance_correction:
        mark = time.perf_counter()
        layer = variance_correct(layer, tensor_variance(w), cfg.epsilon, cfg.variance_includes_zeros)
        timings["variance_correction"] = time.perf_counter() - mark

    reconstruction = None
    if cfg.reconstruct:
        mark = time.perf_counter()
        reconstruction = reconstruct_layer(w, layer, calib, cfg.reconstruction)
        layer = reconstruction.tuned
        timings["reconstruction"] = time.perf_counter() - mark

    timings["total"] = time.perf_counter() - started
    logger.info(
        "pruned %dx%d with %s%s: kept %.4f, factor %.4g",
        w.rows,
        w.cols,
        cfg.residual_shape,
        f" + {cfg.salient_shape} salient" if cfg.salient_shape else "",
        layer.kept_fraction(),
        layer.correction_factor,
    )
    return PipelineRun(layer=layer, scales=scales, reconstruction=reconstruction, timings=timings)


def run_pipeline(w: WeightMatrix, calib: CalibrationSet, cfg: PipelineConfig) -> PrunedLayer:
    """Prune ``w`` according to ``cfg`` and return the pruned layer."""
    return run_pipeline_detailed(w, calib, cfg).layer


def output_error(dense: WeightMatrix, layer: PrunedLayer, calib: CalibrationSet, relative: bool = True) -> float:
    """||W X^T - Ŵ X^T||_F, divided by ||W X^T||_F when ``relative``."""
    if calib.cols != dense.cols or dense.shape != layer.residual.shape:
        raise ShapeError("Dense weights, pruned layer and calibration set do not agree in shape")
    x = calib.as_float64()
    reference = dense.as_float64() @ x.T
    error = float(np.linalg.norm(reference - layer.effective_weights() @ x.T))
    if not relative:
        return error
    scale = float(np.linalg.norm(reference))
    return error / scale if scale > 0 else error


@dataclass(frozen=True)
class AblationRow:
    name: str
    relative_error: float
    correction_factor: float
    kept_fraction: float

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "relative_error": self.relative_error,
            "correction_factor": self.correction_factor,
            "kept_fraction": self.kept_fraction,
        }


# (name, scorer, equalize, variance correction, reconstruct)
ABLATION_LADDER = (
    ("magnitude", "magnitude", False, False, False),
    ("ria", "ria", False, False, False),
    ("ria+vc", "ria", False, True, False),
    ("ria+sq", "ria", True, False, False),
    ("ria+recon", "ria", False, False, True),
    ("ria+sq+recon", "ria", True, False, True),
    ("ria+sq+vc+recon", "ria", True, True, True),
)


def ablation_grid(
    w: WeightMatrix,
    calib: CalibrationSet,
    base: Optional[PipelineConfig] = None,
    ladder: Sequence[tuple] = ABLATION_LADDER,
) -> List[AblationRow]:
    """Run each method combination with the patterns of ``base`` and report output errors."""
    base = base or PipelineConfig()
    rows = []
    for name, scorer, equalize, vc, recon in ladder:
        cfg = base.with_overrides(
            scorer=scorer, use_equalization=equalize, use_variance_correction=vc, reconstruct=recon
        )
        layer = run_pipeline(w, calib, cfg)
        rows.append(
            AblationRow(
                name=name,
                relative_error=output_error(w, layer, calib),
                correction_factor=layer.correction_factor,
                kept_fraction=layer.kept_fraction(),
            )
        )
    return rows

