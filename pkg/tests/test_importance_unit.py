#!/usr/bin/env python3
"""
Unit tests for magnitude and RIA scoring and channel equalization.
"""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from nmsparse.errors import ShapeError
from nmsparse.importance import (
    EqualizationScales,
    ScoreMatrix,
    equalization_scales,
    equalize_for_scoring,
    magnitude_scores,
    ria_scores,
    score_layer,
)
from nmsparse.pipeline import _top_per_block
from nmsparse.patterns import PatternShape
from nmsparse.tensor_core import CalibrationSet, ChannelStats, WeightMatrix, channel_stats, synth_outlier_matrix


def unit_stats(cols):
    return ChannelStats(abs_max=np.ones(cols), l2_norm=np.ones(cols))


class TestMagnitude(unittest.TestCase):
    """Test magnitude scores."""

    def test_examples(self):
        """Scores are absolute values."""
        np.testing.assert_array_equal(magnitude_scores(WeightMatrix([[-3.0, 2.0]])).data, [[3.0, 2.0]])
        np.testing.assert_array_equal(magnitude_scores(WeightMatrix(np.zeros((2, 2)))).data, 0.0)

    def test_sign_flip_invariant(self):
        """Flipping signs leaves scores unchanged."""
        w = synth_outlier_matrix(4, 8, seed=1).data
        np.testing.assert_array_equal(magnitude_scores(WeightMatrix(w)).data, magnitude_scores(WeightMatrix(-w)).data)


class TestEqualization(unittest.TestCase):
    """Test equalization scales and the scoring-only rescale."""

    def test_scales_example(self):
        """Scales balance activation and weight maxima."""
        w = WeightMatrix([[4.0, 0.5], [-1.0, 0.25]])
        stats = ChannelStats(abs_max=[2.0, 1.0], l2_norm=[1.0, 1.0])
        np.testing.assert_allclose(equalization_scales(w, stats).scales, [0.5, 2.0])

    def test_identity_scaling(self):
        """Balanced channels get unit scales."""
        w = WeightMatrix([[3.0, -2.0], [1.0, 1.0]])
        stats = ChannelStats(abs_max=[3.0, 2.0], l2_norm=[1.0, 1.0])
        np.testing.assert_allclose(equalization_scales(w, stats).scales, [1.0, 1.0])

    def test_dead_channel_is_clamped(self):
        """A silent channel is clamped and logged."""
        w = WeightMatrix([[4.0, 2.0]])
        stats = ChannelStats(abs_max=[0.0, 1.0], l2_norm=[0.0, 1.0])
        with self.assertLogs("nmsparse.importance", level="WARNING"):
            scales = equalization_scales(w, stats, clamp_min=1e-8)
        self.assertAlmostEqual(scales.scales[0], 1e-8 / 4.0)

    def test_zero_weight_column_is_clamped(self):
        """An all-zero weight column still gets a finite scale."""
        scales = equalization_scales(WeightMatrix([[0.0, 1.0]]), ChannelStats([1.0, 1.0], [1.0, 1.0]))
        self.assertTrue(np.all(np.isfinite(scales.scales)))

    def test_equalize_example(self):
        """Columns are divided by their scales."""
        w_ec = equalize_for_scoring(WeightMatrix([[4.0, 0.5]]), EqualizationScales([0.5, 2.0]))
        np.testing.assert_allclose(w_ec.data, [[8.0, 0.25]])
        w = WeightMatrix([[1.0, 2.0]])
        np.testing.assert_array_equal(equalize_for_scoring(w, EqualizationScales([1.0, 1.0])).data, w.data)

    def test_output_equivalence(self):
        """(W diag(s)^-1)(x * s) equals W x on random triples."""
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            rows, cols = rng.integers(1, 9, size=2)
            w = rng.standard_normal((rows, cols))
            x = rng.standard_normal(cols)
            s = np.exp(rng.uniform(-3, 3, size=cols))
            w_ec = equalize_for_scoring(WeightMatrix(w), EqualizationScales(s)).data
            reference = w @ x
            worst = max(worst, np.linalg.norm(w_ec @ (x * s) - reference) / max(np.linalg.norm(reference), 1e-300))
        self.assertLess(worst, 1e-10)

    def test_scale_validation(self):
        """Scales must be positive and match the column count."""
        with self.assertRaises(ValueError):
            EqualizationScales([1.0, 0.0])
        with self.assertRaises(ShapeError):
            equalize_for_scoring(WeightMatrix([[1.0, 2.0]]), EqualizationScales([1.0]))


class TestRIA(unittest.TestCase):
    """Test relative importance with activation factor."""

    def test_single_weight(self):
        """A lone weight scores 2 times its activation factor."""
        scores = ria_scores(WeightMatrix([[5.0]]), ChannelStats([1.0], [1.0]), activation_power=0.5)
        self.assertAlmostEqual(scores.data[0, 0], 2.0)

    def test_uniform_matrix(self):
        """Uniform weights score 1 everywhere."""
        scores = ria_scores(WeightMatrix(np.ones((2, 2))), unit_stats(2))
        np.testing.assert_allclose(scores.data, 1.0)

    def test_power_zero_ignores_calibration(self):
        """A zero exponent removes the activation factor."""
        w = synth_outlier_matrix(4, 8, seed=2)
        a = ria_scores(w, ChannelStats(np.ones(8), np.arange(1.0, 9.0)), activation_power=0.0)
        b = ria_scores(w, unit_stats(8), activation_power=0.0)
        np.testing.assert_array_equal(a.data, b.data)

    def test_activation_switch(self):
        """Turning the activation factor off equals a zero exponent."""
        w = synth_outlier_matrix(4, 8, seed=2)
        stats = ChannelStats(np.ones(8), np.arange(1.0, 9.0))
        without = ria_scores(w, stats, use_activation=False)
        np.testing.assert_allclose(without.data, ria_scores(w, stats, activation_power=0.0).data)

    def test_activation_factor(self):
        """Activation norms enter as a square root."""
        w = WeightMatrix([[1.0, 1.0]])
        scores = ria_scores(w, ChannelStats([1.0, 1.0], [4.0, 9.0]), activation_power=0.5)
        np.testing.assert_allclose(scores.data, [[1.5 * 2.0, 1.5 * 3.0]])

    def test_global_scale_invariance(self):
        """Scaling all weights leaves relative importance unchanged."""
        w = synth_outlier_matrix(8, 16, 2, 10.0, seed=3).data
        stats = channel_stats(CalibrationSet(np.random.default_rng(1).standard_normal((32, 16))))
        base = ria_scores(WeightMatrix(w), stats).data
        scaled = ria_scores(WeightMatrix(7.5 * w), stats).data
        self.assertLess(np.max(np.abs(scaled - base) / np.maximum(base, 1e-300)), 1e-10)

    def test_zero_rows_and_columns(self):
        """Zero sums are clamped instead of dividing by zero."""
        scores = ria_scores(WeightMatrix(np.zeros((2, 2))), unit_stats(2))
        np.testing.assert_array_equal(scores.data, 0.0)

    def test_negative_power_rejected(self):
        """The exponent must be non-negative."""
        with self.assertRaises(ValueError):
            ria_scores(WeightMatrix([[1.0]]), unit_stats(1), activation_power=-1.0)

    def test_shape_mismatch(self):
        """Statistics must cover every column."""
        with self.assertRaises(ShapeError):
            ria_scores(WeightMatrix([[1.0, 2.0]]), unit_stats(3))


class TestScoreLayer(unittest.TestCase):
    """Test scorer dispatch with optional equalization."""

    def test_uniform_scales_keep_selection(self):
        """Equal scales for every channel do not change the top-N choice."""
        w = synth_outlier_matrix(8, 16, seed=5)
        stats = ChannelStats(abs_max=np.full(16, 3.0), l2_norm=np.ones(16))
        # every column max becomes 1, so equalization scales are all 3
        scaled = WeightMatrix(w.data / np.abs(w.data).max(axis=0))
        scores_plain, _ = score_layer(scaled, stats, "magnitude", equalize=False)
        scores_eq, scales = score_layer(scaled, stats, "magnitude", equalize=True)
        np.testing.assert_allclose(scales.scales, 3.0)
        shape = PatternShape(2, 4)
        np.testing.assert_array_equal(_top_per_block(scores_plain.data, shape), _top_per_block(scores_eq.data, shape))

    def test_equalization_changes_scores_only(self):
        """Equalization leaves the stored weights untouched."""
        w = synth_outlier_matrix(4, 8, seed=6)
        stats = ChannelStats(np.arange(1.0, 9.0), np.ones(8))
        scores, scales = score_layer(w, stats, "ria", equalize=True)
        self.assertIsInstance(scores, ScoreMatrix)
        self.assertEqual(len(scales), 8)
        np.testing.assert_array_equal(w.data, synth_outlier_matrix(4, 8, seed=6).data)

    def test_unknown_scorer(self):
        """Unknown scorers are refused."""
        with self.assertRaises(ValueError):
            score_layer(WeightMatrix([[1.0]]), unit_stats(1), "wanda")


if __name__ == "__main__":
    unittest.main()
