"""Module containing unit tests on similarity, k-NN selection and candidate sets."""

import unittest
import warnings

import numpy as np

from convnn.errors import CandidateError, ConvNNConfigError, DimensionError
from convnn.models.neighbors import (
    append_positional,
    candidates_all,
    candidates_random,
    candidates_spatial,
    knn,
    positional_coordinates,
    similarity,
)
from convnn.models.oracles import knn_bruteforce


class SimilarityTestCase(unittest.TestCase):
    """Tests on `similarity`."""

    def test_cosine_diagonal(self):
        x = np.random.default_rng(0).normal(size=(6, 4))
        sim = similarity(x, x, normalize=True)
        self.assertTrue(np.allclose(np.diag(sim.values.data), 1.0))
        self.assertTrue(np.all(sim.values.data <= 1.0 + 1e-12))

    def test_no_scaling_without_normalization(self):
        q = np.array([[1.0, 2.0]])
        k = np.array([[3.0, 4.0], [0.0, 1.0]])
        sim = similarity(q, k, normalize=False)
        self.assertTrue(np.allclose(sim.values.data, [[11.0, 2.0]]))

    def test_euclidean_is_negated_squared_distance(self):
        q = np.array([[0.0, 0.0]])
        k = np.array([[3.0, 4.0]])
        sim = similarity(q, k, normalize=False, metric='euclidean')
        self.assertAlmostEqual(float(sim.values.data[0, 0]), -25.0)

    def test_raise_on_width_mismatch(self):
        with self.assertRaises(DimensionError):
            similarity(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_raise_on_bad_metric(self):
        with self.assertRaises(ConvNNConfigError):
            similarity(np.ones((2, 3)), np.ones((2, 3)), metric='manhattan')


class KNNTestCase(unittest.TestCase):
    """Tests on `knn`."""

    def test_matches_bruteforce(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 17))
            k = int(rng.integers(1, n + 1))
            x = rng.normal(size=(n, 3))
            found = knn(similarity(x, x, normalize=True), k).indices
            self.assertTrue(np.array_equal(found, knn_bruteforce(x, k)))

    def test_ties_to_lowest_index(self):
        sim = similarity(np.ones((1, 2)), np.ones((4, 2)), normalize=False)
        self.assertEqual(knn(sim, 3).indices.tolist(), [[0, 1, 2]])

    def test_descending_weights(self):
        x = np.random.default_rng(3).normal(size=(8, 4))
        nbrs = knn(similarity(x, x), 5)
        self.assertTrue(np.all(np.diff(nbrs.weights.data, axis=-1) <= 0))
        self.assertEqual(nbrs.k, 5)

    def test_restricted_to_candidates(self):
        x = np.random.default_rng(4).normal(size=(10, 3))
        cands = candidates_random(10, 4, seed=7)
        nbrs = knn(similarity(x, x), 4, candidates=cands)
        for row in nbrs.indices:
            self.assertEqual(sorted(row.tolist()), cands.indices.tolist())

    def test_raise_on_k_above_candidates(self):
        x = np.ones((6, 2))
        with self.assertRaises(ConvNNConfigError):
            knn(similarity(x, x), 4, candidates=candidates_spatial(6, 2))


class CandidateTestCase(unittest.TestCase):
    """Tests on candidate subsets."""

    def test_all(self):
        self.assertEqual(candidates_all(5).indices.tolist(), [0, 1, 2, 3, 4])

    def test_random_deterministic_and_distinct(self):
        a = candidates_random(50, 10, seed=3)
        b = candidates_random(50, 10, seed=3)
        self.assertTrue(np.array_equal(a.indices, b.indices))
        self.assertEqual(len(set(a.indices.tolist())), 10)

    def test_random_clamped_with_warning(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            cands = candidates_random(4, 9, seed=0)
        self.assertEqual(len(cands), 4)
        self.assertTrue(caught)

    def test_raise_on_non_positive_r(self):
        with self.assertRaises(CandidateError):
            candidates_random(4, 0, seed=0)

    def test_spatial_1d(self):
        self.assertEqual(candidates_spatial(10, 3).indices.tolist(), [0, 3, 6, 9])

    def test_spatial_2d(self):
        cands = candidates_spatial((4, 4), 4)
        self.assertEqual(cands.indices.tolist(), [0, 2, 8, 10])
        self.assertEqual(cands.n, 16)

    def test_raise_on_spatial_2d_non_square_r(self):
        with self.assertRaises(CandidateError):
            candidates_spatial((4, 4), 3)


class PositionalTestCase(unittest.TestCase):
    """Tests on coordinate channels."""

    def test_coordinates_2d(self):
        coords = positional_coordinates((2, 3))
        self.assertTrue(np.allclose(coords[:, 0], [0, 0.5, 1, 0, 0.5, 1]))
        self.assertTrue(np.allclose(coords[:, 1], [0, 0, 0, 1, 1, 1]))

    def test_append_positional(self):
        out = append_positional(np.zeros((2, 3, 4, 4)), (4, 4))
        self.assertEqual(out.shape, (2, 5, 4, 4))
        self.assertEqual(float(out.data[1, 3, 0, 3]), 1.0)
        self.assertEqual(float(out.data[1, 4, 3, 0]), 1.0)
