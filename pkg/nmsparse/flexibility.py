"""
Storage/flexibility comparison between stacked small blocks and one large block.

Four stacked 2:4 blocks cover 16 elements with 6**4 = 1296 patterns, all of
which are valid 8:16 patterns; 8:16 admits C(16, 8) = 12870. The helpers here
check that injection exhaustively and measure what the extra freedom buys on
random importance scores.
"""

import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np

from .errors import PatternError
from .patterns import (
    PatternShape,
    bits_per_element,
    config_count,
    get_codec,
    pattern_table,
    stacked_config_count,
)

logger = logging.getLogger(__name__)

SHAPE_2_4 = PatternShape(2, 4)
SHAPE_8_16 = PatternShape(8, 16)

_CHUNK = 512


def _outer_shape(inner: PatternShape, repeats: int) -> PatternShape:
    return PatternShape(inner.n_keep * repeats, inner.m_block * repeats)


def stacked_patterns(inner: PatternShape, repeats: int) -> np.ndarray:
    """Every concatenation of ``repeats`` inner patterns, (C**repeats, M*repeats) bool."""
    if repeats < 1:
        raise PatternError(f"repeats must be at least 1, got {repeats}")
    table = pattern_table(inner)
    rows = [np.concatenate(combo) for combo in itertools.product(table, repeat=repeats)]
    return np.array(rows, dtype=bool).reshape(-1, inner.m_block * repeats)


@dataclass(frozen=True)
class SupersetReport:
    inner: str
    outer: str
    stacked_count: int
    valid_count: int
    distinct_count: int
    outer_count: int

    @property
    def holds(self) -> bool:
        return self.valid_count == self.stacked_count == self.distinct_count

    def to_dict(self) -> Dict:
        result = asdict(self)
        result["holds"] = self.holds
        return result


def verify_superset(
    inner: PatternShape = SHAPE_2_4, repeats: int = 4, outer: Optional[PatternShape] = None
) -> SupersetReport:
    """Check that stacked inner patterns inject into the outer pattern space."""
    outer = outer or _outer_shape(inner, repeats)
    if outer.m_block != inner.m_block * repeats:
        raise PatternError(f"{repeats} x {inner} does not cover an {outer} block")
    stacked = stacked_patterns(inner, repeats)
    valid = stacked.sum(axis=1) == outer.n_keep
    ranks = get_codec(outer).rank_blocks(stacked[valid]) if valid.any() else np.array([])
    report = SupersetReport(
        inner=str(inner),
        outer=str(outer),
        stacked_count=int(stacked.shape[0]),
        valid_count=int(valid.sum()),
        distinct_count=int(len(set(ranks.tolist()))),
        outer_count=config_count(outer),
    )
    logger.info("superset check %s x%d -> %s: %s", inner, repeats, outer, report)
    return report


def _best_over(scores: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    weights = patterns.astype(np.float64).T
    best = np.empty(scores.shape[0], dtype=np.float64)
    for start in range(0, scores.shape[0], _CHUNK):
        chunk = scores[start:start + _CHUNK]
        best[start:start + _CHUNK] = (chunk @ weights).max(axis=1)
    return best


def best_kept_scores(scores: np.ndarray, shape: PatternShape) -> np.ndarray:
    """Best kept-score sum per block by exhaustive search over every pattern."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, shape.m_block)
    return _best_over(scores, pattern_table(shape))


def best_stacked_kept_scores(scores: np.ndarray, inner: PatternShape, repeats: int) -> np.ndarray:
    """Best kept-score sum per block over stacked inner patterns only."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, inner.m_block * repeats)
    return _best_over(scores, stacked_patterns(inner, repeats))


@dataclass(frozen=True)
class DominanceReport:
    inner: str
    outer: str
    blocks: int
    violations: int
    strict: int
    max_gain: float
    topk_agrees: bool

    @property
    def holds(self) -> bool:
        return self.violations == 0 and self.strict >= 1 and self.topk_agrees

    def to_dict(self) -> Dict:
        result = asdict(self)
        result["holds"] = self.holds
        return result


def verify_dominance(
    blocks: int = 10000, seed: int = 0, inner: PatternShape = SHAPE_2_4, repeats: int = 4
) -> DominanceReport:
    """Compare best outer vs best stacked-inner kept scores on seeded random blocks.

    The exhaustive outer optimum is also cross-checked against the sum of the
    top-N scores of each block.
    """
    outer = _outer_shape(inner, repeats)
    rng = np.random.Generator(np.random.PCG64(seed))
    scores = rng.random((blocks, outer.m_block))
    best_outer = best_kept_scores(scores, outer)
    best_stacked = best_stacked_kept_scores(scores, inner, repeats)
    topk = -np.sort(-scores, axis=1)[:, : outer.n_keep].sum(axis=1)
    gain = best_outer - best_stacked
    # exhaustive matmul sums and sorted sums differ only by rounding
    tolerance = 1e-12 * outer.m_block
    report = DominanceReport(
        inner=str(inner),
        outer=str(outer),
        blocks=int(blocks),
        violations=int(np.sum(gain < -tolerance)),
        strict=int(np.sum(gain > tolerance)),
        max_gain=float(gain.max()) if blocks else 0.0,
        topk_agrees=bool(np.allclose(best_outer, topk, rtol=0, atol=tolerance)),
    )
    logger.info("dominance check: %s", report)
    return report


def pattern_summary(shape: PatternShape, stack_to: Optional[int] = 16) -> Dict:
    """One row of the pattern analysis table."""
    codec = get_codec(shape)
    bpe = bits_per_element(shape)
    row = {
        "pattern": str(shape),
        "config_count": codec.config_count,
        "bits_per_block": codec.bits_per_block,
        "bits_per_element": float(bpe),
        "bits_per_element_exact": f"{bpe.numerator}/{bpe.denominator}",
        "stacked_repeats": None,
        "stacked_config_count": None,
    }
    if stack_to and stack_to % shape.m_block == 0 and stack_to // shape.m_block > 1:
        repeats = stack_to // shape.m_block
        row["stacked_repeats"] = repeats
        row["stacked_config_count"] = stacked_config_count(shape, repeats)
    return row
