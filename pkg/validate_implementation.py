#!/usr/bin/env python3
"""
Full-size acceptance checks for nmsparse.

The unit tests under tests/ run the same properties on smaller samples;
this script runs the complete counts and exits non-zero on any failure.
"""

import itertools
import sys
import time
from pathlib import Path

import numpy as np

from nmsparse import (
    CalibrationSet,
    PipelineConfig,
    SparseEncodedTensor,
    WeightMatrix,
    bits_per_element,
    config_count,
    decode_layer,
    encode,
    run_pipeline,
    spmv,
    verify_dominance,
    verify_superset,
)
from nmsparse.flexibility import SHAPE_2_4, SHAPE_8_16
from nmsparse.patterns import PatternShape, get_codec, stacked_config_count

GOLDEN = Path(__file__).parent / "tests" / "data" / "golden_2of4_1x8.nms1"


def test_pattern_arithmetic():
    """Configuration counts and metadata cost, zero tolerance."""
    print("🧪 Pattern arithmetic")
    checks = [
        ("C(4, 2) = 6", config_count(SHAPE_2_4) == 6),
        ("C(16, 8) = 12870", config_count(SHAPE_8_16) == 12870),
        ("stacked 2:4 = 1296", stacked_config_count(SHAPE_2_4, 4) == 1296),
        ("2:4 costs 0.75 bits/element", bits_per_element(SHAPE_2_4) == 0.75),
        ("8:16 costs 0.875 bits/element", bits_per_element(SHAPE_8_16) == 0.875),
    ]
    for name, ok in checks:
        print(f"{'✅' if ok else '❌'} {name}")
    return all(ok for _, ok in checks)


def test_rank_codec():
    """Ranks follow colex order for every shape with M <= 16, plus the stacked injection."""
    print("\n🧪 Rank codec")
    bad_shapes = []
    for m_block in range(1, 17):
        for n_keep in range(1, m_block + 1):
            shape = PatternShape(n_keep, m_block)
            codec = get_codec(shape)
            colex = sorted(itertools.combinations(range(m_block), n_keep), key=lambda c: c[::-1])
            if [codec.rank(kept) for kept in colex] != list(range(codec.config_count)) or any(
                codec.unrank(r) != kept for r, kept in enumerate(colex)
            ):
                bad_shapes.append(str(shape))
    print(f"{'✅' if not bad_shapes else '❌'} 136 shapes with M <= 16 rank in colex order and round trip"
          + (f", failing: {bad_shapes}" if bad_shapes else ""))
    all_passed = not bad_shapes
    report = verify_superset(SHAPE_2_4, 4)
    print(f"{'✅' if report.holds else '❌'} {report.valid_count}/{report.stacked_count} stacked patterns "
          f"are distinct valid 8:16 patterns ({report.distinct_count} distinct)")
    return all_passed and report.holds


def test_dominance(blocks=10000):
    print("\n🧪 8:16 dominance over stacked 2:4")
    report = verify_dominance(blocks, seed=0)
    print(f"{'✅' if report.holds else '❌'} {report.blocks} blocks: {report.violations} violations, "
          f"{report.strict} strictly better, exhaustive search agrees with top-k: {report.topk_agrees}")
    return report.holds


def _legal(layer, cfg):
    shape = cfg.residual_shape
    if not np.all(layer.residual_mask.keep.reshape(-1, shape.m_block).sum(axis=1) == shape.n_keep):
        return False
    if layer.salient is None:
        return True
    s = layer.salient.shape
    return (
        not np.any(layer.salient.mask.keep & layer.residual_mask.keep)
        and np.all(layer.salient.mask.keep.reshape(-1, s.m_block).sum(axis=1) == s.n_keep)
    )


def test_mask_legality(runs=10000):
    """Random pipelines never produce an illegal or overlapping mask."""
    print("\n🧪 Mask legality fuzz")
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(runs):
        cols = 256 * int(rng.integers(1, 3))
        cfg = PipelineConfig(
            residual_shape=str(rng.choice(["2:4", "8:16", "4:16", "1:4"])),
            salient_shape=str(rng.choice(["none", "4:256", "8:256", "16:256"])),
            scorer=str(rng.choice(["magnitude", "ria"])),
            use_equalization=bool(rng.integers(2)),
            use_variance_correction=bool(rng.integers(2)),
        )
        w = WeightMatrix(rng.standard_normal((int(rng.integers(1, 4)), cols)))
        calib = CalibrationSet(rng.standard_normal((4, cols)))
        violations += not _legal(run_pipeline(w, calib, cfg), cfg)
    print(f"{'✅' if not violations else '❌'} {runs} runs, {violations} violations")
    return violations == 0


def test_spmv(fixtures=10000):
    """Products from packed streams equal the dense product of the decoded layer."""
    print("\n🧪 Packed matrix-vector products")
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(fixtures):
        salient = "none" if trial % 4 else str(rng.choice(["4:256", "16:256"]))
        cols = 256 if salient != "none" else 16 * int(rng.integers(1, 5))
        cfg = PipelineConfig(residual_shape=str(rng.choice(["2:4", "8:16"])), salient_shape=salient)
        w = WeightMatrix(rng.standard_normal((int(rng.integers(1, 4)), cols)))
        t = encode(run_pipeline(w, CalibrationSet(rng.standard_normal((4, cols))), cfg))
        x = rng.standard_normal(cols)
        reference = decode_layer(t).effective_weights() @ x
        scale = max(np.abs(reference).max(), 1.0)
        worst = max(worst, float(np.abs(spmv(t, x) - reference).max() / scale))
    ok = worst < 1e-10
    print(f"{'✅' if ok else '❌'} {fixtures} fixtures, worst relative difference {worst:.3g}")
    return ok


def test_format_stability():
    print("\n🧪 NMS1 stability")
    blob = GOLDEN.read_bytes()
    layer = decode_layer(SparseEncodedTensor.from_bytes(blob))
    golden_ok = encode(layer).to_bytes() == blob
    print(f"{'✅' if golden_ok else '❌'} golden file re-encodes byte for byte")

    rng = np.random.default_rng(3)
    stable = True
    for _ in range(200):
        cfg = PipelineConfig(residual_shape="8:16", salient_shape="8:256", use_variance_correction=True)
        w = WeightMatrix(rng.standard_normal((3, 512)).astype(np.float32))
        first = encode(run_pipeline(w, CalibrationSet(rng.standard_normal((8, 512))), cfg)).to_bytes()
        stable &= encode(decode_layer(SparseEncodedTensor.from_bytes(first))).to_bytes() == first
    print(f"{'✅' if stable else '❌'} encode -> decode -> encode is byte-identical on 200 random layers")
    return golden_ok and stable


if __name__ == "__main__":
    print("🚀 nmsparse acceptance checks")
    print("=" * 60)

    tests = [
        test_pattern_arithmetic,
        test_rank_codec,
        test_dominance,
        test_mask_legality,
        test_spmv,
        test_format_stability,
    ]

    results = []
    for test in tests:
        started = time.perf_counter()
        results.append(test())
        print(f"   ({time.perf_counter() - started:.1f}s)")

    print("\n" + "=" * 60)
    passed = sum(results)
    if all(results):
        print(f"🎉 ALL {passed} CHECKS PASSED")
    else:
        print(f"❌ {len(results) - passed} of {len(results)} checks failed")
    print("Equivalence, variance, reconstruction and error-ordering checks live in tests/.")
    sys.exit(0 if all(results) else 1)
