"""
Fixed-width bit packing for rank streams.

Values are written lowest bit first into little-endian bytes. Each row is
padded with zero bits to a byte boundary so rows decode independently.
Widths up to 62 bits go through numpy; wider values (salient patterns over
256-blocks need up to 84 bits) use Python integers. Both paths produce
identical bytes.
"""

from typing import List, Sequence

import numpy as np

NUMPY_WIDTH_LIMIT = 62


def packed_row_bytes(count: int, width: int) -> int:
    return (count * width + 7) // 8


def pack_row(values: Sequence[int], width: int) -> bytes:
    """Pack one row of unsigned integers of ``width`` bits."""
    acc = 0
    shift = 0
    for value in values:
        value = int(value)
        if value < 0 or value >> width:
            raise ValueError(f"Value {value} does not fit in {width} bits")
        acc |= value << shift
        shift += width
    return acc.to_bytes(packed_row_bytes(len(values), width), "little")


def unpack_row(data: bytes, count: int, width: int) -> List[int]:
    """Inverse of :func:`pack_row`. Non-zero padding bits raise ``ValueError``."""
    if len(data) != packed_row_bytes(count, width):
        raise ValueError(f"Row needs {packed_row_bytes(count, width)} bytes, got {len(data)}")
    acc = int.from_bytes(data, "little")
    if acc >> (count * width):
        raise ValueError("Non-zero padding bits after the last value")
    field = (1 << width) - 1
    values = []
    for _ in range(count):
        values.append(acc & field)
        acc >>= width
    return values


def pack_rows(values, width: int) -> bytes:
    """Pack a (rows, count) array of unsigned integers, one padded row at a time."""
    if width > NUMPY_WIDTH_LIMIT or (isinstance(values, np.ndarray) and values.dtype == object):
        return b"".join(pack_row(row, width) for row in values)
    values = np.asarray(values, dtype=np.int64)
    rows, count = values.shape
    if width == 0 or count == 0:
        if np.any(values):
            raise ValueError("Non-zero values cannot be stored in 0 bits")
        return b""
    if values.size and (values.min() < 0 or values.max() >> width):
        raise ValueError(f"Values do not fit in {width} bits")
    bits = ((values[..., np.newaxis] >> np.arange(width)) & 1).astype(np.uint8)
    bits = bits.reshape(rows, count * width)
    pad = (-count * width) % 8
    if pad:
        bits = np.pad(bits, ((0, 0), (0, pad)))
    return np.packbits(bits, axis=1, bitorder="little").tobytes()


def unpack_rows(data: bytes, rows: int, count: int, width: int) -> np.ndarray:
    """Inverse of :func:`pack_rows`; returns int64 or, above 62 bits, Python ints."""
    row_bytes = packed_row_bytes(count, width)
    if len(data) != rows * row_bytes:
        raise ValueError(f"Stream needs {rows * row_bytes} bytes, got {len(data)}")
    if width > NUMPY_WIDTH_LIMIT:
        out = np.empty((rows, count), dtype=object)
        for r in range(rows):
            out[r, :] = unpack_row(data[r * row_bytes:(r + 1) * row_bytes], count, width)
        return out
    if width == 0 or count == 0:
        return np.zeros((rows, count), dtype=np.int64)
    raw = np.frombuffer(data, dtype=np.uint8).reshape(rows, row_bytes)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    if np.any(bits[:, count * width:]):
        raise ValueError("Non-zero padding bits after the last value")
    bits = bits[:, : count * width].reshape(rows, count, width).astype(np.int64)
    return (bits << np.arange(width, dtype=np.int64)).sum(axis=2)
