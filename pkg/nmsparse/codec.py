"""
NMS1: packed on-disk format for pruned layers.

Layout (all integers little-endian)::

    magic     4s   b"NMS1"
    version   u16  1
    rows      u32
    cols      u32
    n_keep    u16  residual N
    m_block   u16  residual M
    salient_k u16  0 when there is no salient store
    salient_m u16  0 when there is no salient store
    dtype     u8   0 = float32, 1 = float64
    flags     u8   bit 0: salient store present
    factor    f64  variance correction factor
    then four streams, each a u64 byte length followed by the bytes:
        residual values, residual ranks, salient values, salient ranks

Values are stored in block order (kept indices ascending inside a block).
Ranks are colex combinadic ranks, ``ceil(log2 C(M, N))`` bits each, packed
lowest bit first and padded to a byte boundary per row.
"""

import logging
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .bitstream import pack_rows, packed_row_bytes, unpack_rows
from .errors import (
    FormatError,
    HeaderMismatchError,
    InvalidRankError,
    PatternError,
    ShapeError,
    TruncatedStreamError,
)
from .layer import PrunedLayer, SalientStore
from .patterns import TABLE_LIMIT, NMMask, PatternShape, get_codec, mask_from_rank_stream, pattern_table, ranks_from_mask
from .tensor_core import DTYPE_TAGS, WeightMatrix, dtype_tag

logger = logging.getLogger(__name__)

MAGIC = b"NMS1"
VERSION = 1
FLAG_SALIENT = 0x01
MAX_BLOCK = 0xFFFF
MAX_DIM = 0xFFFFFFFF

_PREFIX = struct.Struct("<4sH")
_HEADER = struct.Struct("<IIHHHHBBd")
_LENGTH = struct.Struct("<Q")
_STREAMS = ("residual_values", "residual_ranks", "salient_values", "salient_ranks")


@dataclass(frozen=True)
class EncodedHeader:
    rows: int
    cols: int
    residual_shape: PatternShape
    salient_shape: Optional[PatternShape]
    dtype_tag: int
    correction_factor: float
    version: int = VERSION

    @property
    def dtype(self) -> np.dtype:
        return DTYPE_TAGS[self.dtype_tag]

    @property
    def flags(self) -> int:
        return FLAG_SALIENT if self.salient_shape is not None else 0

    def _blocks_per_row(self, shape: Optional[PatternShape]) -> int:
        return self.cols // shape.m_block if shape is not None else 0

    @property
    def residual_value_count(self) -> int:
        return self.rows * self._blocks_per_row(self.residual_shape) * self.residual_shape.n_keep

    @property
    def residual_rank_bytes(self) -> int:
        width = get_codec(self.residual_shape).bits_per_block
        return self.rows * packed_row_bytes(self._blocks_per_row(self.residual_shape), width)

    @property
    def salient_value_count(self) -> int:
        if self.salient_shape is None:
            return 0
        return self.rows * self._blocks_per_row(self.salient_shape) * self.salient_shape.n_keep

    @property
    def salient_rank_bytes(self) -> int:
        if self.salient_shape is None:
            return 0
        width = get_codec(self.salient_shape).bits_per_block
        return self.rows * packed_row_bytes(self._blocks_per_row(self.salient_shape), width)

    def stream_sizes(self) -> Dict[str, int]:
        itemsize = self.dtype.itemsize
        return {
            "residual_values": self.residual_value_count * itemsize,
            "residual_ranks": self.residual_rank_bytes,
            "salient_values": self.salient_value_count * itemsize,
            "salient_ranks": self.salient_rank_bytes,
        }

    def to_dict(self) -> Dict:
        return {
            "format": MAGIC.decode("ascii"),
            "version": self.version,
            "rows": self.rows,
            "cols": self.cols,
            "residual_pattern": str(self.residual_shape),
            "salient_pattern": str(self.salient_shape) if self.salient_shape else None,
            "dtype": str(self.dtype.newbyteorder("=")),
            "flags": self.flags,
            "correction_factor": self.correction_factor,
            "stream_bytes": self.stream_sizes(),
            "file_bytes": encoded_size(self),
        }

    def pack(self) -> bytes:
        salient_k = self.salient_shape.n_keep if self.salient_shape else 0
        salient_m = self.salient_shape.m_block if self.salient_shape else 0
        return _PREFIX.pack(MAGIC, self.version) + _HEADER.pack(
            self.rows,
            self.cols,
            self.residual_shape.n_keep,
            self.residual_shape.m_block,
            salient_k,
            salient_m,
            self.dtype_tag,
            self.flags,
            self.correction_factor,
        )


def encoded_size(header: EncodedHeader) -> int:
    """Exact NMS1 file size implied by a header."""
    return _PREFIX.size + _HEADER.size + len(_STREAMS) * _LENGTH.size + sum(header.stream_sizes().values())


def _parse_header(blob: bytes) -> EncodedHeader:
    if len(blob) < _PREFIX.size + _HEADER.size:
        raise TruncatedStreamError(f"NMS1 header needs {_PREFIX.size + _HEADER.size} bytes, got {len(blob)}")
    magic, version = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise HeaderMismatchError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise HeaderMismatchError(f"Unsupported NMS1 version {version}")
    rows, cols, n_keep, m_block, salient_k, salient_m, tag, flags, factor = _HEADER.unpack_from(blob, _PREFIX.size)
    if tag not in DTYPE_TAGS:
        raise HeaderMismatchError(f"Unknown dtype tag {tag}")
    if bool(flags & FLAG_SALIENT) != (salient_k > 0) or flags & ~FLAG_SALIENT:
        raise HeaderMismatchError(f"Flags {flags:#x} disagree with salient K={salient_k}")
    try:
        residual_shape = PatternShape(n_keep, m_block)
        salient_shape = PatternShape(salient_k, salient_m) if salient_k else None
    except PatternError as exc:
        raise HeaderMismatchError(f"Invalid pattern in header: {exc}")
    for shape in (residual_shape, salient_shape):
        if shape is not None and cols % shape.m_block:
            raise HeaderMismatchError(f"{cols} columns are not divisible by block size {shape.m_block}")
    if not np.isfinite(factor) or factor <= 0:
        raise HeaderMismatchError(f"Invalid correction factor {factor}")
    return EncodedHeader(rows, cols, residual_shape, salient_shape, tag, factor, version)


@dataclass(frozen=True, eq=False)
class SparseEncodedTensor:
    """A pruned layer in packed form."""

    header: EncodedHeader
    residual_values: np.ndarray
    residual_ranks: bytes
    salient_values: np.ndarray
    salient_ranks: bytes

    def to_bytes(self) -> bytes:
        dtype = self.header.dtype
        parts = [self.header.pack()]
        for payload in (
            np.ascontiguousarray(self.residual_values, dtype=dtype).tobytes(),
            self.residual_ranks,
            np.ascontiguousarray(self.salient_values, dtype=dtype).tobytes(),
            self.salient_ranks,
        ):
            parts.append(_LENGTH.pack(len(payload)))
            parts.append(payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SparseEncodedTensor":
        header = _parse_header(blob)
        offset = _PREFIX.size + _HEADER.size
        expected = header.stream_sizes()
        streams = {}
        for name in _STREAMS:
            if len(blob) < offset + _LENGTH.size:
                raise TruncatedStreamError(f"Missing length prefix for {name}")
            (length,) = _LENGTH.unpack_from(blob, offset)
            offset += _LENGTH.size
            if len(blob) < offset + length:
                raise TruncatedStreamError(f"{name} needs {length} bytes, {len(blob) - offset} remain")
            if length != expected[name]:
                raise HeaderMismatchError(f"{name} is {length} bytes, header implies {expected[name]}")
            streams[name] = blob[offset:offset + length]
            offset += length
        if offset != len(blob):
            raise HeaderMismatchError(f"{len(blob) - offset} trailing bytes after the last stream")
        dtype = header.dtype
        native = dtype.newbyteorder("=")
        return cls(
            header=header,
            residual_values=np.frombuffer(streams["residual_values"], dtype=dtype).astype(native),
            residual_ranks=streams["residual_ranks"],
            salient_values=np.frombuffer(streams["salient_values"], dtype=dtype).astype(native),
            salient_ranks=streams["salient_ranks"],
        )

    def write(self, path: Union[str, Path]) -> int:
        blob = self.to_bytes()
        Path(path).write_bytes(blob)
        logger.debug("wrote %s (%d bytes)", path, len(blob))
        return len(blob)

    @classmethod
    def read(cls, path: Union[str, Path]) -> "SparseEncodedTensor":
        return cls.from_bytes(Path(path).read_bytes())

    @property
    def nbytes(self) -> int:
        return encoded_size(self.header)


def _pack_mask(mask: NMMask) -> bytes:
    width = get_codec(mask.shape).bits_per_block
    ranks = ranks_from_mask(mask).reshape(mask.rows, mask.blocks_per_row)
    return pack_rows(ranks, width)


def _unpack_ranks(data: bytes, rows: int, cols: int, shape: PatternShape) -> np.ndarray:
    codec = get_codec(shape)
    try:
        ranks = unpack_rows(data, rows, cols // shape.m_block, codec.bits_per_block)
    except ValueError as exc:
        raise HeaderMismatchError(str(exc))
    if ranks.size:
        too_big = ranks >= codec.config_count
        if np.any(too_big):
            row, block = (int(i[0]) for i in np.nonzero(too_big))
            raise InvalidRankError(
                f"Row {row} block {block} has rank {ranks[row, block]}, {shape} allows < {codec.config_count}"
            )
    return ranks


def _check_header_range(layer: PrunedLayer):
    if layer.rows > MAX_DIM or layer.cols > MAX_DIM:
        raise FormatError(f"{layer.rows}x{layer.cols} does not fit the u32 NMS1 dimensions")
    shapes = [layer.residual_mask.shape] + ([layer.salient.shape] if layer.salient is not None else [])
    for shape in shapes:
        if shape.m_block > MAX_BLOCK:
            raise FormatError(f"Block size {shape.m_block} of {shape} exceeds the NMS1 limit of {MAX_BLOCK}")


def encode(layer: PrunedLayer) -> SparseEncodedTensor:
    """Pack a pruned layer. Salient values are stored in the residual's dtype."""
    _check_header_range(layer)
    tag = dtype_tag(layer.residual.dtype)
    dtype = DTYPE_TAGS[tag]
    mask = layer.residual_mask
    salient_shape = layer.salient.shape if layer.salient is not None else None
    header = EncodedHeader(layer.rows, layer.cols, mask.shape, salient_shape, tag, layer.correction_factor)

    salient_values = np.zeros(0, dtype=dtype)
    salient_ranks = b""
    if layer.salient is not None:
        salient_values = layer.salient.values.astype(dtype)
        salient_ranks = _pack_mask(layer.salient.mask)

    encoded = SparseEncodedTensor(
        header=header,
        residual_values=layer.residual.data[mask.keep].astype(dtype),
        residual_ranks=_pack_mask(mask),
        salient_values=salient_values,
        salient_ranks=salient_ranks,
    )
    logger.debug("encoded %dx%d layer into %d bytes", layer.rows, layer.cols, encoded.nbytes)
    return encoded


def _check_counts(t: SparseEncodedTensor):
    h = t.header
    if t.residual_values.size != h.residual_value_count:
        raise HeaderMismatchError(f"{t.residual_values.size} residual values, header implies {h.residual_value_count}")
    if t.salient_values.size != h.salient_value_count:
        raise HeaderMismatchError(f"{t.salient_values.size} salient values, header implies {h.salient_value_count}")


def _decode_mask(data: bytes, header: EncodedHeader, shape: PatternShape) -> NMMask:
    ranks = _unpack_ranks(data, header.rows, header.cols, shape)
    return mask_from_rank_stream(ranks.ravel(), shape, header.rows, header.cols)


def decode_layer(t: SparseEncodedTensor) -> PrunedLayer:
    """Rebuild the full pruned layer, mask and correction factor included."""
    _check_counts(t)
    h = t.header
    dtype = h.dtype.newbyteorder("=")
    mask = _decode_mask(t.residual_ranks, h, h.residual_shape)
    residual = np.zeros((h.rows, h.cols), dtype=dtype)
    residual[mask.keep] = t.residual_values
    salient = None
    if h.salient_shape is not None:
        salient_mask = _decode_mask(t.salient_ranks, h, h.salient_shape)
        salient = SalientStore(salient_mask, np.asarray(t.salient_values, dtype=dtype))
    try:
        return PrunedLayer(WeightMatrix(residual), mask, salient, h.correction_factor)
    except (PatternError, ShapeError, ValueError) as exc:
        raise FormatError(f"Decoded layer is inconsistent: {exc}")


def decode(t: SparseEncodedTensor) -> Tuple[WeightMatrix, Optional[SalientStore]]:
    """Dense residual (zeros at pruned positions) and the salient store."""
    layer = decode_layer(t)
    return layer.residual, layer.salient


@lru_cache(maxsize=None)
def _index_table(shape: PatternShape) -> np.ndarray:
    """(C(M, N), N) kept indices per rank."""
    table = pattern_table(shape)
    return np.argsort(~table, axis=1, kind="stable")[:, : shape.n_keep]


def _columns(ranks: np.ndarray, shape: PatternShape) -> np.ndarray:
    """(rows, blocks * N) column index of every stored value."""
    rows, blocks = ranks.shape
    offsets = (np.arange(blocks) * shape.m_block)[np.newaxis, :, np.newaxis]
    if shape.m_block <= TABLE_LIMIT:
        within = _index_table(shape)[ranks.astype(np.int64)]
    else:
        codec = get_codec(shape)
        within = np.array(
            [[codec.unrank(rank) for rank in row] for row in ranks.tolist()], dtype=np.int64
        ).reshape(rows, blocks, shape.n_keep)
    return (within + offsets).reshape(rows, blocks * shape.n_keep)


def _stream_product(data: bytes, values: np.ndarray, header: EncodedHeader, shape: PatternShape, x: np.ndarray):
    ranks = _unpack_ranks(data, header.rows, header.cols, shape)
    columns = _columns(ranks, shape)
    products = values.astype(np.float64).reshape(columns.shape) * x[columns]
    return products.sum(axis=1)


def spmv(t: SparseEncodedTensor, x, include_salient: bool = True) -> np.ndarray:
    """y = residual · x (+ salient · x) straight from the packed streams.

    Each row is reduced along the stored value order, so the result does not
    depend on how rows are scheduled.
    """
    _check_counts(t)
    h = t.header
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != h.cols:
        raise ShapeError(f"x must be a vector of length {h.cols}, got shape {x.shape}")
    y = np.zeros(h.rows, dtype=np.float64)
    if h.rows == 0:
        return y
    y += _stream_product(t.residual_ranks, t.residual_values, h, h.residual_shape, x)
    if include_salient and h.salient_shape is not None:
        y += _stream_product(t.salient_ranks, t.salient_values, h, h.salient_shape, x)
    return y
