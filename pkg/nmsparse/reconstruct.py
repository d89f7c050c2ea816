"""
Masked layer-wise reconstruction.

Tunes the kept residual weights so the pruned layer reproduces the dense
layer's outputs on calibration activations:

    minimize  ||(W_dense - R - S) X^T||_F^2 + ridge * ||R||_F^2

over R with R fixed to zero outside the residual mask. S (salient values) and
the mask never change. Projected gradient descent with a backtracking step
keeps the loss non-increasing.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, NumericalError, PatternError, ShapeError
from .layer import PrunedLayer
from .tensor_core import CalibrationSet, WeightMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructionSettings:
    """Optimizer settings; ``step_size=None`` means 1/L from the Gram matrix."""

    max_iters: int = 500
    step_size: Optional[float] = None
    rel_tol: float = 1e-7
    ridge: float = 0.0
    max_backtracks: int = 50

    def __post_init__(self):
        if int(self.max_iters) < 0:
            raise ConfigError(f"max_iters must be non-negative, got {self.max_iters}")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError(f"step_size must be positive, got {self.step_size}")
        if not self.rel_tol > 0:
            raise ConfigError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be non-negative, got {self.ridge}")
        if int(self.max_backtracks) < 1:
            raise ConfigError(f"max_backtracks must be at least 1, got {self.max_backtracks}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "ReconstructionSettings":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown reconstruction settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    tuned: PrunedLayer
    initial_loss: float
    final_loss: float
    iterations: int
    loss_history: Tuple[float, ...] = ()


def reconstruction_loss(
    target: np.ndarray, residual: np.ndarray, x: np.ndarray, ridge: float = 0.0
) -> float:
    """||(target - residual) X^T||_F^2 + ridge ||residual||_F^2.

    ``target`` is the dense matrix minus the salient values.
    """
    error = (target - residual) @ x.T
    loss = float(np.sum(error * error))
    if ridge:
        loss += ridge * float(np.sum(residual * residual))
    return loss


def reconstruction_gradient(
    target: np.ndarray, residual: np.ndarray, gram: np.ndarray, keep: np.ndarray, ridge: float = 0.0
) -> np.ndarray:
    """Gradient of :func:`reconstruction_loss` restricted to kept positions.

    ``gram`` is X^T X.
    """
    grad = -2.0 * (target - residual) @ gram
    if ridge:
        grad += 2.0 * ridge * residual
    return np.where(keep, grad, 0.0)


def _lipschitz(x: np.ndarray, ridge: float) -> float:
    if x.size == 0:
        return 2.0 * ridge
    return 2.0 * float(np.linalg.norm(x, ord=2)) ** 2 + 2.0 * ridge


def _check_finite(loss: float, where: str):
    if not np.isfinite(loss):
        raise NumericalError(f"Reconstruction loss became non-finite {where}; reduce step_size")


def reconstruct_layer(
    dense: WeightMatrix,
    layer: PrunedLayer,
    calib: CalibrationSet,
    settings: Optional[ReconstructionSettings] = None,
) -> ReconstructionResult:
    """Tune kept residual weights against the dense layer on ``calib``.

    Parameters
    ----------
    dense : WeightMatrix
        The original unpruned weights.
    layer : PrunedLayer
        Pruned layer whose residual mask and salient store stay fixed.
    calib : CalibrationSet
        Activations, samples × in-channels.
    settings : ReconstructionSettings, optional
        Optimizer settings, defaults if omitted.

    Returns
    -------
    ReconstructionResult
        The tuned layer with initial and final loss. ``final_loss`` never
        exceeds ``initial_loss``.
    """
    settings = settings or ReconstructionSettings()
    if dense.shape != layer.residual.shape:
        raise ShapeError(f"Dense shape {dense.shape} differs from layer shape {layer.residual.shape}")
    if calib.cols != dense.cols:
        raise ShapeError(f"Calibration has {calib.cols} channels, weights have {dense.cols}")

    x = calib.as_float64()
    keep = layer.residual_mask.keep
    target = dense.as_float64() - layer.salient_dense()
    weights = np.where(keep, layer.residual.as_float64(), 0.0)
    ridge = float(settings.ridge)

    loss = reconstruction_loss(target, weights, x, ridge)
    _check_finite(loss, "at the starting point")
    initial_loss = loss
    history = [loss]

    lipschitz = _lipschitz(x, ridge)
    step = settings.step_size if settings.step_size is not None else (1.0 / lipschitz if lipschitz > 0 else 0.0)
    gram = x.T @ x

    iterations = 0
    while iterations < settings.max_iters and step > 0 and loss > 0:
        grad = reconstruction_gradient(target, weights, gram, keep, ridge)
        if not np.any(grad):
            break
        trial_step = step
        for _ in range(settings.max_backtracks):
            candidate = weights - trial_step * grad
            candidate_loss = reconstruction_loss(target, candidate, x, ridge)
            _check_finite(candidate_loss, f"at iteration {iterations + 1}")
            if candidate_loss <= loss:
                break
            trial_step *= 0.5
        else:
            logger.debug("no decrease after %d backtracks, stopping", settings.max_backtracks)
            break
        if np.any(candidate[~keep] != 0):
            raise PatternError("Reconstruction step wrote outside the residual mask")
        improvement = loss - candidate_loss
        previous = loss
        weights, loss = candidate, candidate_loss
        iterations += 1
        history.append(loss)
        if improvement <= settings.rel_tol * previous:
            break

    logger.info(
        "reconstruction: loss %.6g -> %.6g in %d iterations", initial_loss, loss, iterations
    )
    tuned = layer.replace(residual=WeightMatrix(weights.astype(layer.residual.dtype)))
    return ReconstructionResult(
        tuned=tuned,
        initial_loss=initial_loss,
        final_loss=loss,
        iterations=iterations,
        loss_history=tuple(history),
    )
