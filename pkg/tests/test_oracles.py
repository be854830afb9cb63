"""Module containing unit tests on the reference oracles and reduction checks."""

import json
import unittest

import numpy as np

from convnn.errors import ConvNNConfigError, DimensionError
from convnn.models.oracles import (
    attention_naive,
    check_attention_reduction,
    check_conv_reduction,
    conv2d_naive,
    knn_bruteforce,
    kvt_attention_naive,
)
from convnn.models.tensor import Tensor, conv2d


class NaiveOracleTestCase(unittest.TestCase):
    """Tests on the loop-based reference implementations."""

    def test_attention_equal_scores_average_values(self):
        q = np.ones((2, 3))
        k = np.ones((4, 3))
        v = np.arange(8, dtype=float).reshape(4, 2)
        out = attention_naive(q, k, v)
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)))

    def test_kvt_with_all_keys_is_attention(self):
        rng = np.random.default_rng(0)
        q, k, v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        self.assertTrue(np.allclose(kvt_attention_naive(q, k, v, 5, normalize=True),
                                    attention_naive(q, k, v, normalize=True)))

    def test_kvt_top_one_picks_best_key(self):
        q = np.array([[1.0, 0.0]])
        k = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]])
        v = np.array([[1.0], [2.0], [3.0]])
        self.assertEqual(float(kvt_attention_naive(q, k, v, 1)[0, 0]), 2.0)

    def test_raise_on_kvt_out_of_range(self):
        with self.assertRaises(ConvNNConfigError):
            kvt_attention_naive(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 1)), 3)

    def test_conv2d_naive_matches_tensor_conv(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 5, 6))
        kernels = rng.normal(size=(3, 2, 3, 3))
        bias = rng.normal(size=3)
        expected = conv2d(x[None], Tensor(kernels), bias=Tensor(bias), padding=1).data[0]
        actual = conv2d_naive(x, kernels, bias=bias, padding='zero-same')
        np.testing.assert_allclose(actual, expected, atol=1e-12)

    def test_conv2d_naive_no_padding_shape(self):
        out = conv2d_naive(np.ones((1, 5, 5)), np.ones((1, 1, 3, 3)))
        self.assertEqual(out.shape, (1, 3, 3))
        self.assertTrue(np.all(out == 9.0))

    def test_knn_bruteforce(self):
        x = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.0]])
        self.assertEqual(knn_bruteforce(x, 2)[:, 1].tolist(), [1, 0, 1, 2])


class ReductionTestCase(unittest.TestCase):
    """Tests on `check_attention_reduction` and `check_conv_reduction`."""

    def test_attention_reduction_full(self):
        """Test k = n compares against both KVT and full cosine attention."""
        report = check_attention_reduction(8, 4, 4, 4, 8, seed=0)
        self.assertTrue(report.passed)
        self.assertEqual(set(report.details), {'kvt', 'attention'})
        self.assertLessEqual(report.deviation, 1e-10)

    def test_attention_reduction_kvt(self):
        report = check_attention_reduction(16, 4, 3, 5, 3, seed=2)
        self.assertTrue(report.passed)
        self.assertEqual(set(report.details), {'kvt'})

    def test_attention_reduction_detects_perturbation(self):
        report = check_attention_reduction(8, 4, 4, 4, 3, seed=0, perturbation=1e-3)
        self.assertFalse(report.passed)
        self.assertGreater(report.deviation, 1e-10)

    def test_raise_on_attention_k_out_of_range(self):
        with self.assertRaises(ConvNNConfigError):
            check_attention_reduction(4, 2, 2, 2, 5, seed=0)

    def test_conv_reduction(self):
        for grid in ((5, 5), (6, 8)):
            with self.subTest(grid=grid):
                report = check_conv_reduction(grid)
                self.assertTrue(report.passed, msg=report.to_json())
                self.assertEqual(report.details['interior_mismatches'], 0)
                self.assertEqual(report.details['interior_positions'],
                                 (grid[0] - 2) * (grid[1] - 2))

    def test_conv_reduction_boundary_counts(self):
        """Test border positions select 9 neighbours where the clipped window has
        fewer, so all of them are counted as mismatches."""
        details = check_conv_reduction((5, 6)).details
        self.assertEqual(details['boundary_positions'], 5 * 6 - 3 * 4)
        self.assertEqual(details['boundary_mismatches_out_of_claim'], 18)

    def test_raise_on_conv_reduction_small_grid(self):
        with self.assertRaises(DimensionError):
            check_conv_reduction((4, 4))

    def test_raise_on_conv_reduction_k(self):
        with self.assertRaises(ConvNNConfigError):
            check_conv_reduction((5, 5), k=4)

    def test_report_json(self):
        report = check_attention_reduction(4, 2, 2, 2, 1, seed=3)
        record = json.loads(report.to_json())
        self.assertEqual(record['config'], {'n': 4, 'c': 2, 'h': 2, 'v': 2, 'k': 1,
                                            'seed': 3})
        self.assertEqual(record['passed'], report.passed)
