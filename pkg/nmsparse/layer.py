"""Pruned layer containers shared by the pipeline, reconstruction and codec."""

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import PatternError, ShapeError
from .patterns import NMMask, PatternShape
from .tensor_core import WeightMatrix


@dataclass(frozen=True, eq=False)
class SalientStore:
    """Salient weights kept in a structured K:M pattern.

    ``values`` follow the mask in row-major order, i.e. block order with
    kept indices ascending inside each block.
    """

    mask: NMMask
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, copy=True).ravel()
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        if values.shape[0] != self.mask.kept_count:
            raise ShapeError(f"{values.shape[0]} salient values for {self.mask.kept_count} salient positions")
        if not np.all(np.isfinite(values)):
            raise ValueError("Salient values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> PatternShape:
        return self.mask.shape

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_dense(cls, mask: NMMask, matrix: np.ndarray) -> "SalientStore":
        return cls(mask, np.asarray(matrix)[mask.keep])

    def dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.mask.keep.shape, dtype=dtype)
        out[self.mask.keep] = self.values
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SalientStore):
            return NotImplemented
        return (
            self.mask == other.mask
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PrunedLayer:
    """Residual N:M weights, their mask, optional salient store and the VC factor."""

    residual: WeightMatrix
    residual_mask: NMMask
    salient: Optional[SalientStore] = None
    correction_factor: float = 1.0

    def __post_init__(self):
        if not isinstance(self.residual, WeightMatrix):
            object.__setattr__(self, "residual", WeightMatrix(self.residual))
        if self.residual.shape != self.residual_mask.keep.shape:
            raise ShapeError(
                f"Residual shape {self.residual.shape} differs from mask shape {self.residual_mask.keep.shape}"
            )
        if np.any(self.residual.data[~self.residual_mask.keep] != 0):
            raise PatternError("Residual has non-zero values outside its mask")
        if self.salient is not None:
            if self.salient.mask.keep.shape != self.residual.shape:
                raise ShapeError("Salient mask shape differs from residual shape")
            if np.any(self.salient.mask.keep & self.residual_mask.keep):
                raise PatternError("Salient and residual masks overlap")
        factor = float(self.correction_factor)
        if not np.isfinite(factor) or factor <= 0:
            raise ValueError(f"correction_factor must be positive and finite, got {factor}")
        object.__setattr__(self, "correction_factor", factor)

    @property
    def rows(self) -> int:
        return self.residual.rows

    @property
    def cols(self) -> int:
        return self.residual.cols

    @property
    def residual_shape(self) -> PatternShape:
        return self.residual_mask.shape

    def salient_dense(self) -> np.ndarray:
        if self.salient is None:
            return np.zeros(self.residual.shape, dtype=np.float64)
        return self.salient.dense(np.float64)

    def effective_weights(self) -> np.ndarray:
        """Residual plus salient values as one dense float64 matrix."""
        return self.residual.as_float64() + self.salient_dense()

    def kept_fraction(self) -> float:
        total = self.rows * self.cols
        if not total:
            return 0.0
        kept = self.residual_mask.kept_count + (self.salient.count if self.salient else 0)
        return kept / total

    def replace(self, **changes) -> "PrunedLayer":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PrunedLayer):
            return NotImplemented
        return (
            self.residual_mask == other.residual_mask
            and self.residual.dtype == other.residual.dtype
            and np.array_equal(self.residual.data, other.residual.data)
            and self.salient == other.salient
            and self.correction_factor == other.correction_factor
        )

    __hash__ = None
