#!/usr/bin/env python3
"""
Unit tests for masked layer-wise reconstruction.
"""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from nmsparse.errors import ConfigError, NumericalError, ShapeError
from nmsparse.importance import magnitude_scores
from nmsparse.layer import PrunedLayer
from nmsparse.patterns import NMMask, PatternShape, config_count, mask_from_rank_stream
from nmsparse.pipeline import extract_salient, prune_residual
from nmsparse.reconstruct import (
    ReconstructionSettings,
    reconstruct_layer,
    reconstruction_gradient,
    reconstruction_loss,
)
from nmsparse.tensor_core import CalibrationSet, WeightMatrix


def pruned(w, shape=PatternShape(2, 4)):
    residual, mask = prune_residual(w, magnitude_scores(w), None, shape)
    return PrunedLayer(residual, mask)


class TestSettings(unittest.TestCase):
    """Test reconstruction settings."""

    def test_defaults(self):
        """Defaults are 500 iterations, automatic step and 1e-7 tolerance."""
        settings = ReconstructionSettings()
        self.assertEqual(settings.max_iters, 500)
        self.assertIsNone(settings.step_size)
        self.assertEqual(settings.rel_tol, 1e-7)

    def test_validation(self):
        """Out-of-range settings raise ConfigError."""
        for bad in ({"max_iters": -1}, {"step_size": 0.0}, {"rel_tol": 0.0}, {"ridge": -1.0}, {"max_backtracks": 0}):
            with self.assertRaises(ConfigError, msg=str(bad)):
                ReconstructionSettings(**bad)

    def test_dict_round_trip(self):
        """Settings round trip through dicts; unknown keys are refused."""
        settings = ReconstructionSettings(max_iters=20, ridge=0.5)
        self.assertEqual(ReconstructionSettings.from_dict(settings.to_dict()), settings)
        with self.assertRaises(ConfigError):
            ReconstructionSettings.from_dict({"iterations": 3})


class TestClosedForm(unittest.TestCase):
    """Compare against least-squares solutions."""

    def test_two_weight_example(self):
        """Dense [1, 1], keep position 0, identity activations: v = 1, loss 1."""
        mask = NMMask(PatternShape(1, 2), [[True, False]])
        layer = PrunedLayer(WeightMatrix([[0.25, 0.0]]), mask)
        result = reconstruct_layer(
            WeightMatrix([[1.0, 1.0]]), layer, CalibrationSet([[1.0, 0.0], [0.0, 1.0]])
        )
        self.assertAlmostEqual(result.tuned.residual.data[0, 0], 1.0, places=12)
        self.assertEqual(result.tuned.residual.data[0, 1], 0.0)
        self.assertAlmostEqual(result.final_loss, 1.0, places=12)
        self.assertAlmostEqual(result.initial_loss, 0.75 ** 2 + 1.0)

    def test_single_row_matches_normal_equations(self):
        """Long runs reach the least-squares solution over the kept positions."""
        rng = np.random.default_rng(31)
        shape = PatternShape(8, 16)
        settings = ReconstructionSettings(max_iters=5000, rel_tol=1e-15)
        for _ in range(10):
            dense = rng.standard_normal((1, 16))
            x = rng.standard_normal((256, 16))
            mask = mask_from_rank_stream([int(rng.integers(config_count(shape)))], shape, 1, 16)
            layer = PrunedLayer(WeightMatrix(np.where(mask.keep, dense, 0.0)), mask)
            result = reconstruct_layer(WeightMatrix(dense), layer, CalibrationSet(x), settings)

            kept = np.flatnonzero(mask.keep[0])
            expected, *_ = np.linalg.lstsq(x[:, kept], x @ dense[0], rcond=None)
            np.testing.assert_allclose(result.tuned.residual.data[0, kept], expected, rtol=0, atol=1e-6)

    def test_salient_is_part_of_the_target(self):
        """Tuning only touches residual entries; salient values stay fixed."""
        rng = np.random.default_rng(2)
        w = WeightMatrix(rng.standard_normal((2, 256)))
        scores = magnitude_scores(w)
        salient = extract_salient(w, scores, PatternShape(4, 256), PatternShape(2, 4))
        residual, mask = prune_residual(w, scores, salient, PatternShape(2, 4))
        layer = PrunedLayer(residual, mask, salient)
        result = reconstruct_layer(w, layer, CalibrationSet(rng.standard_normal((64, 256))))
        self.assertEqual(result.tuned.salient, salient)
        self.assertEqual(result.tuned.residual_mask, mask)
        self.assertLess(result.final_loss, result.initial_loss)


class TestGradient(unittest.TestCase):
    """Test the analytic gradient."""

    def test_finite_differences(self):
        """Analytic gradient matches central differences on kept entries."""
        rng = np.random.default_rng(13)
        h = 1e-6
        for trial in range(100):
            rows, cols, samples = 3, 8, 10
            ridge = 0.3 if trial % 2 else 0.0
            target = rng.standard_normal((rows, cols))
            x = rng.standard_normal((samples, cols))
            layer = pruned(WeightMatrix(rng.standard_normal((rows, cols))))
            keep = layer.residual_mask.keep
            r = layer.residual.as_float64()
            analytic = reconstruction_gradient(target, r, x.T @ x, keep, ridge)
            numeric = np.zeros_like(r)
            for i, j in zip(*np.nonzero(keep)):
                step = np.zeros_like(r)
                step[i, j] = h
                plus = reconstruction_loss(target, r + step, x, ridge)
                minus = reconstruction_loss(target, r - step, x, ridge)
                numeric[i, j] = (plus - minus) / (2 * h)
            self.assertTrue(np.all(analytic[~keep] == 0))
            self.assertLess(np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic), 1e-5)


class TestOptimizer(unittest.TestCase):
    """Test monotonicity, masks and failure modes."""

    def test_loss_never_increases(self):
        """Loss history is non-increasing and counts the iterations."""
        rng = np.random.default_rng(21)
        for trial in range(100):
            w = WeightMatrix(rng.standard_normal((4, 16)))
            calib = CalibrationSet(rng.standard_normal((12, 16)) * rng.choice([0.1, 1.0, 10.0]))
            settings = ReconstructionSettings(max_iters=50, ridge=0.1 if trial % 3 == 0 else 0.0)
            result = reconstruct_layer(w, pruned(w), calib, settings)
            history = np.array(result.loss_history)
            self.assertTrue(np.all(np.diff(history) <= 0))
            self.assertLessEqual(result.final_loss, result.initial_loss)
            self.assertEqual(result.iterations, len(history) - 1)

    def test_mask_and_dtype_preserved(self):
        """The tuned residual keeps its mask and dtype."""
        rng = np.random.default_rng(3)
        w = WeightMatrix(rng.standard_normal((4, 16)).astype(np.float32))
        layer = pruned(w)
        result = reconstruct_layer(w, layer, CalibrationSet(rng.standard_normal((32, 16))))
        self.assertEqual(result.tuned.residual.dtype, np.float32)
        self.assertEqual(result.tuned.residual_mask, layer.residual_mask)
        self.assertTrue(np.all(result.tuned.residual.data[~layer.residual_mask.keep] == 0))

    def test_zero_iterations(self):
        """No iterations returns the layer unchanged."""
        rng = np.random.default_rng(4)
        w = WeightMatrix(rng.standard_normal((2, 8)))
        layer = pruned(w)
        result = reconstruct_layer(w, layer, CalibrationSet(rng.standard_normal((4, 8))),
                                   ReconstructionSettings(max_iters=0))
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.tuned, layer)

    def test_divergent_step_raises(self):
        """A huge fixed step overflows into a NumericalError."""
        rng = np.random.default_rng(5)
        w = WeightMatrix(rng.standard_normal((2, 8)))
        with self.assertRaises(NumericalError):
            reconstruct_layer(w, pruned(w), CalibrationSet(rng.standard_normal((4, 8))),
                              ReconstructionSettings(step_size=1e300))

    def test_shape_mismatch(self):
        """Calibration must match the layer width."""
        w = WeightMatrix(np.ones((2, 8)))
        with self.assertRaises(ShapeError):
            reconstruct_layer(w, pruned(w), CalibrationSet(np.ones((4, 4))))


if __name__ == "__main__":
    unittest.main()
