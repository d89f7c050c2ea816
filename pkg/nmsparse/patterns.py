"""
N:M pattern shapes, block masks and the combinadic pattern codec.

Convention: in ``N:M`` the first number is the count of KEPT elements per
block, so 2:4 and 8:16 are both 50% sparse. Blocks run along the input
(column) dimension inside each row.

A block's kept-index set is ranked in colexicographic order,

    rank({c_0 < c_1 < ... < c_{N-1}}) = sum_k C(c_k, k + 1),

which is a bijection onto [0, C(M, N)). Unranking is a greedy scan from the
highest position downward.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import PatternError, ShapeError

logger = logging.getLogger(__name__)

PASCAL_LIMIT = 64
# Shapes with M up to this size get a dense (C(M, N), M) lookup table.
TABLE_LIMIT = 16


def _pascal(limit: int):
    rows = [[1]]
    for n in range(1, limit + 1):
        prev = rows[-1]
        rows.append([1] + [prev[k - 1] + prev[k] for k in range(1, n)] + [1])
    return rows


_PASCAL = _pascal(PASCAL_LIMIT)
# C(64, 32) < 2**63, so every entry fits in int64.
_BINOM64 = np.zeros((PASCAL_LIMIT + 1, PASCAL_LIMIT + 2), dtype=np.int64)
for _n, _row in enumerate(_PASCAL):
    _BINOM64[_n, : len(_row)] = _row


def binomial(n: int, k: int) -> int:
    """Exact C(n, k); zero outside 0 <= k <= n."""
    if k < 0 or n < 0 or k > n:
        return 0
    if n <= PASCAL_LIMIT:
        return _PASCAL[n][k]
    return math.comb(n, k)


@dataclass(frozen=True, order=True)
class PatternShape:
    """Keep ``n_keep`` of every ``m_block`` consecutive elements."""

    n_keep: int
    m_block: int

    def __post_init__(self):
        for name in ("n_keep", "m_block"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise PatternError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.m_block < 1:
            raise PatternError(f"Block size must be at least 1, got {self.m_block}")
        if not 1 <= self.n_keep <= self.m_block:
            raise PatternError(
                f"Kept count must be between 1 and {self.m_block}, got {self.n_keep}"
            )

    @classmethod
    def parse(cls, text: str) -> "PatternShape":
        """Parse ``"N:M"`` where N is the kept count."""
        parts = str(text).strip().split(":")
        if len(parts) != 2:
            raise PatternError(f"Invalid pattern '{text}'. Use the form N:M, e.g. 2:4 or 8:16")
        try:
            n_keep, m_block = int(parts[0]), int(parts[1])
        except ValueError:
            raise PatternError(f"Invalid pattern '{text}'. N and M must be integers")
        if n_keep > m_block:
            raise PatternError(f"Invalid pattern '{text}'. Kept count N cannot exceed block size M")
        return cls(n_keep, m_block)

    def __str__(self) -> str:
        return f"{self.n_keep}:{self.m_block}"

    @property
    def density(self) -> float:
        return self.n_keep / self.m_block

    @property
    def sparsity(self) -> float:
        return 1.0 - self.density


def config_count(shape: PatternShape) -> int:
    """Number of admissible block patterns, C(M, N)."""
    return binomial(shape.m_block, shape.n_keep)


def stacked_config_count(shape: PatternShape, repeats: int) -> int:
    """Patterns reachable by concatenating ``repeats`` independent blocks."""
    if repeats < 1:
        raise PatternError(f"repeats must be at least 1, got {repeats}")
    return config_count(shape) ** repeats


def bits_for(count: int) -> int:
    """ceil(log2(count)) for count >= 1."""
    return (count - 1).bit_length()


def bits_per_element(shape: PatternShape) -> Fraction:
    """Fixed-width metadata cost per element, ceil(log2 C(M, N)) / M."""
    return Fraction(bits_for(config_count(shape)), shape.m_block)


class PatternCodec:
    """Rank/unrank between kept-index sets and integers for one shape."""

    def __init__(self, shape: PatternShape):
        self.shape = shape
        self.config_count = config_count(shape)
        self.bits_per_block = bits_for(self.config_count)

    def __repr__(self) -> str:
        return f"PatternCodec({self.shape}, configs={self.config_count}, bits={self.bits_per_block})"

    def rank(self, kept: Iterable[int]) -> int:
        kept = [int(c) for c in kept]
        n_keep, m_block = self.shape.n_keep, self.shape.m_block
        if len(kept) != n_keep:
            raise PatternError(f"Expected {n_keep} kept indices, got {len(kept)}")
        previous = -1
        for c in kept:
            if not 0 <= c < m_block:
                raise PatternError(f"Index {c} outside block of size {m_block}")
            if c <= previous:
                raise PatternError(f"Kept indices must be strictly increasing, got {kept}")
            previous = c
        return sum(binomial(c, k + 1) for k, c in enumerate(kept))

    def unrank(self, rank: int) -> Tuple[int, ...]:
        rank = int(rank)
        if not 0 <= rank < self.config_count:
            raise PatternError(f"Rank {rank} outside [0, {self.config_count}) for {self.shape}")
        kept = []
        c = self.shape.m_block - 1
        for k in range(self.shape.n_keep, 0, -1):
            while binomial(c, k) > rank:
                c -= 1
            kept.append(c)
            rank -= binomial(c, k)
            c -= 1
        return tuple(reversed(kept))

    def rank_blocks(self, blocks: np.ndarray) -> np.ndarray:
        """Ranks of a (B, M) bool array of blocks.

        int64 for M <= 64, otherwise an object array of Python ints.
        """
        blocks = np.asarray(blocks, dtype=bool)
        n_keep, m_block = self.shape.n_keep, self.shape.m_block
        if blocks.ndim != 2 or blocks.shape[1] != m_block:
            raise ShapeError(f"Expected blocks of width {m_block}, got shape {blocks.shape}")
        counts = blocks.sum(axis=1)
        if np.any(counts != n_keep):
            bad = int(np.flatnonzero(counts != n_keep)[0])
            raise PatternError(f"Block {bad} keeps {int(counts[bad])} elements, expected {n_keep}")
        # stable argsort of the negated mask lists kept positions first, ascending
        kept = np.argsort(~blocks, axis=1, kind="stable")[:, :n_keep]
        if m_block <= PASCAL_LIMIT:
            ranks = np.zeros(blocks.shape[0], dtype=np.int64)
            for k in range(n_keep):
                ranks += _BINOM64[kept[:, k], k + 1]
            return ranks
        ranks = np.empty(blocks.shape[0], dtype=object)
        for b, row in enumerate(kept.tolist()):
            ranks[b] = sum(binomial(c, k + 1) for k, c in enumerate(row))
        return ranks

    def unrank_blocks(self, ranks: Sequence[int]) -> np.ndarray:
        """(B, M) bool array for a sequence of ranks."""
        ranks = np.asarray(ranks, dtype=object if self.bits_per_block > 62 else np.int64).ravel()
        m_block = self.shape.m_block
        if m_block <= TABLE_LIMIT:
            ranks = ranks.astype(np.int64)
            if ranks.size and (ranks.min() < 0 or ranks.max() >= self.config_count):
                bad = ranks[(ranks < 0) | (ranks >= self.config_count)][0]
                raise PatternError(f"Rank {int(bad)} outside [0, {self.config_count}) for {self.shape}")
            return pattern_table(self.shape)[ranks]
        blocks = np.zeros((ranks.size, m_block), dtype=bool)
        for b, rank in enumerate(ranks):
            blocks[b, list(self.unrank(rank))] = True
        return blocks


@lru_cache(maxsize=None)
def get_codec(shape: PatternShape) -> PatternCodec:
    return PatternCodec(shape)


@lru_cache(maxsize=None)
def pattern_table(shape: PatternShape) -> np.ndarray:
    """All patterns of a small shape as a read-only (C(M, N), M) bool array in rank order."""
    if shape.m_block > TABLE_LIMIT:
        raise PatternError(f"Pattern tables are limited to M <= {TABLE_LIMIT}, got {shape}")
    codec = get_codec(shape)
    table = np.zeros((codec.config_count, shape.m_block), dtype=bool)
    for rank in range(codec.config_count):
        table[rank, list(codec.unrank(rank))] = True
    table.setflags(write=False)
    logger.debug("built pattern table for %s (%d patterns)", shape, codec.config_count)
    return table


def rank_pattern(kept: Iterable[int], shape: PatternShape) -> int:
    """Colexicographic rank of a sorted kept-index set."""
    return get_codec(shape).rank(kept)


def unrank_pattern(rank: int, shape: PatternShape) -> Tuple[int, ...]:
    """Sorted kept-index set with the given colex rank."""
    return get_codec(shape).unrank(rank)


class NMMask:
    """Binary keep-mask with exactly N set bits in every M-block of every row."""

    __slots__ = ("shape", "keep")

    def __init__(self, shape: PatternShape, keep: np.ndarray):
        keep = np.array(keep, dtype=bool, copy=True)
        if keep.ndim != 2:
            raise ShapeError(f"Mask must be 2-D, got shape {keep.shape}")
        rows, cols = keep.shape
        if cols % shape.m_block:
            raise ShapeError(f"{cols} columns are not divisible by block size {shape.m_block}")
        counts = keep.reshape(rows, cols // shape.m_block, shape.m_block).sum(axis=2)
        if counts.size and np.any(counts != shape.n_keep):
            row, block = (int(i[0]) for i in np.nonzero(counts != shape.n_keep))
            raise PatternError(
                f"Row {row} block {block} keeps {int(counts[row, block])} elements, "
                f"expected {shape.n_keep} for {shape}"
            )
        keep.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "keep", keep)

    def __setattr__(self, name, value):
        raise AttributeError("NMMask is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, NMMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.keep, other.keep)

    __hash__ = None

    def __repr__(self) -> str:
        return f"NMMask({self.shape}, rows={self.rows}, cols={self.cols})"

    @property
    def rows(self) -> int:
        return self.keep.shape[0]

    @property
    def cols(self) -> int:
        return self.keep.shape[1]

    @property
    def blocks_per_row(self) -> int:
        return self.cols // self.shape.m_block

    @property
    def block_count(self) -> int:
        return self.rows * self.blocks_per_row

    @property
    def kept_count(self) -> int:
        return self.block_count * self.shape.n_keep

    def blocks(self) -> np.ndarray:
        """(rows * blocks_per_row, M) view in row-major block order."""
        return self.keep.reshape(-1, self.shape.m_block)

    def kept_fraction(self) -> float:
        total = self.rows * self.cols
        return self.kept_count / total if total else 0.0


def ranks_from_mask(mask: NMMask) -> np.ndarray:
    """Per-block ranks of a mask in row-major block order."""
    return get_codec(mask.shape).rank_blocks(mask.blocks())


def mask_from_rank_stream(ranks: Sequence[int], shape: PatternShape, rows: int, cols: int) -> NMMask:
    """Rebuild a mask from its per-block ranks (row-major block order)."""
    if cols % shape.m_block:
        raise ShapeError(f"{cols} columns are not divisible by block size {shape.m_block}")
    expected = rows * (cols // shape.m_block)
    if len(ranks) != expected:
        raise PatternError(f"Expected {expected} ranks for a {rows}x{cols} {shape} mask, got {len(ranks)}")
    blocks = get_codec(shape).unrank_blocks(ranks)
    return NMMask(shape, blocks.reshape(rows, cols))
