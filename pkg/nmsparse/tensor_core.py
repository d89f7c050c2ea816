"""
Dense containers, channel statistics and synthetic fixtures.

Every other module works on the types defined here. Containers hold a
read-only numpy array; statistics are always computed in float64 no matter
how the weights are stored.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

logger = logging.getLogger(__name__)

# Synthetic fixtures are drawn from numpy's PCG64 bit generator. Changing the
# algorithm or the draw order changes every fixture, so bump this tag if you do.
PRNG_ALGORITHM = "PCG64 v1"

DWT_MAGIC = b"DWT1"
_DWT_HEADER = struct.Struct("<4sIIB")
DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

ArrayLike = Union[np.ndarray, "WeightMatrix", "CalibrationSet"]


def dtype_tag(dtype) -> int:
    """Return the DWT1/NMS1 tag for a float dtype."""
    dtype = np.dtype(dtype)
    if dtype == np.float32:
        return 0
    if dtype == np.float64:
        return 1
    raise ValueError(f"Unsupported dtype '{dtype}'. Valid options: float32, float64")


def _validate_matrix(data, name: str) -> np.ndarray:
    """Validate a 2-D finite float matrix and return a read-only copy."""
    array = np.array(data, copy=True)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {array.shape}")
    if array.dtype not in (np.float32, np.float64):
        array = array.astype(np.float64)
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Dense weight tensor, out-channels × in-channels, row-major."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _validate_matrix(self.data, "WeightMatrix"))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    """Activation samples, samples × in-channels."""

    data: np.ndarray

    def __post_init__(self):
        array = _validate_matrix(self.data, "CalibrationSet")
        if array.shape[0] < 1:
            raise ShapeError("CalibrationSet needs at least one sample")
        object.__setattr__(self, "data", array)

    @property
    def samples(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """Per input channel activation statistics."""

    abs_max: np.ndarray
    l2_norm: np.ndarray

    def __post_init__(self):
        for name in ("abs_max", "l2_norm"):
            vector = np.array(getattr(self, name), dtype=np.float64)
            if vector.ndim != 1:
                raise ShapeError(f"{name} must be a vector")
            if np.any(vector < 0) or not np.all(np.isfinite(vector)):
                raise ValueError(f"{name} entries must be non-negative and finite")
            vector.setflags(write=False)
            object.__setattr__(self, name, vector)
        if self.abs_max.shape != self.l2_norm.shape:
            raise ShapeError("abs_max and l2_norm lengths differ")

    @property
    def cols(self) -> int:
        return self.abs_max.shape[0]


def channel_stats(calib: CalibrationSet) -> ChannelStats:
    """Compute max|x_j| and ||X_j||_2 for every input channel."""
    if calib is None or calib.samples < 1:
        raise ShapeError("Calibration set is empty")
    x = calib.as_float64()
    return ChannelStats(abs_max=np.abs(x).max(axis=0), l2_norm=np.sqrt((x * x).sum(axis=0)))


def _float64_values(w: ArrayLike) -> np.ndarray:
    if isinstance(w, (WeightMatrix, CalibrationSet)):
        return w.as_float64()
    return np.asarray(w, dtype=np.float64)


def tensor_variance(w: ArrayLike) -> float:
    """Population variance over every entry of ``w``.

    Divides by the element count. Computed in float64 with the mean
    subtracted first.
    """
    values = _float64_values(w)
    if values.size < 1:
        raise ShapeError("Variance needs at least one element")
    centered = values - values.mean()
    return float((centered * centered).mean())


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _outlier_columns(rng: np.random.Generator, cols: int, outlier_cols: int) -> np.ndarray:
    return np.sort(rng.choice(cols, size=outlier_cols, replace=False))


def _synth(rows: int, cols: int, outlier_cols: int, outlier_scale: float, seed: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeError(f"Dimensions must be positive, got {rows}x{cols}")
    if not 0 <= outlier_cols <= cols:
        raise ConfigError(f"outlier_cols must be between 0 and {cols}, got {outlier_cols}")
    if outlier_scale < 1:
        raise ConfigError(f"outlier_scale must be at least 1, got {outlier_scale}")
    rng = _generator(seed)
    data = rng.standard_normal((rows, cols))
    columns = _outlier_columns(rng, cols, outlier_cols)
    data[:, columns] *= outlier_scale
    logger.debug("synthesized %dx%d seed=%d outlier columns %s", rows, cols, seed, columns.tolist())
    return data


def synth_outlier_matrix(
    rows: int, cols: int, outlier_cols: int = 0, outlier_scale: float = 1.0, seed: int = 0
) -> WeightMatrix:
    """Seeded standard-normal weights with a few amplified input columns.

    Parameters
    ----------
    rows, cols : int
        Output and input channel counts, both positive.
    outlier_cols : int
        Number of distinct columns multiplied by ``outlier_scale``.
    outlier_scale : float
        Amplification factor, at least 1.
    seed : int
        Seed for the PCG64 generator; equal seeds give bit-identical output.
    """
    return WeightMatrix(_synth(rows, cols, outlier_cols, outlier_scale, seed))


def synth_calibration(
    samples: int, cols: int, outlier_cols: int = 0, outlier_scale: float = 1.0, seed: int = 0
) -> CalibrationSet:
    """Seeded activations with a few outlier channels, same generator as the weights."""
    return CalibrationSet(_synth(samples, cols, outlier_cols, outlier_scale, seed))


# DWT1 dense container


def encode_dense(data: ArrayLike, dtype=None) -> bytes:
    """Serialize a matrix to DWT1 bytes."""
    if isinstance(data, (WeightMatrix, CalibrationSet)):
        data = data.data
    array = np.asarray(data)
    if array.ndim != 2:
        raise ShapeError(f"DWT1 stores 2-D matrices, got shape {array.shape}")
    tag = dtype_tag(dtype if dtype is not None else array.dtype)
    rows, cols = array.shape
    payload = np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes()
    return _DWT_HEADER.pack(DWT_MAGIC, rows, cols, tag) + payload


def decode_dense(blob: bytes) -> np.ndarray:
    """Parse DWT1 bytes into a 2-D array of the stored dtype."""
    if len(blob) < _DWT_HEADER.size:
        raise FormatError(f"DWT1 header needs {_DWT_HEADER.size} bytes, got {len(blob)}")
    magic, rows, cols, tag = _DWT_HEADER.unpack_from(blob)
    if magic != DWT_MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {DWT_MAGIC!r}")
    if tag not in DTYPE_TAGS:
        raise FormatError(f"Unknown dtype tag {tag}")
    dtype = DTYPE_TAGS[tag]
    expected = rows * cols * dtype.itemsize
    payload = blob[_DWT_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"DWT1 payload is {len(payload)} bytes, header implies {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(rows, cols)
    return array.astype(dtype.newbyteorder("="))


def save_dense(path: Union[str, Path], data: ArrayLike, dtype=None) -> int:
    """Write a DWT1 file and return the number of bytes written."""
    blob = encode_dense(data, dtype)
    Path(path).write_bytes(blob)
    logger.debug("wrote %s (%d bytes)", path, len(blob))
    return len(blob)


def load_dense(path: Union[str, Path]) -> np.ndarray:
    return decode_dense(Path(path).read_bytes())


def load_weights(path: Union[str, Path]) -> WeightMatrix:
    return WeightMatrix(load_dense(path))


def load_calibration(path: Union[str, Path]) -> CalibrationSet:
    return CalibrationSet(load_dense(path))
