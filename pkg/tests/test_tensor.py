"""Module containing unit tests on the autodiff engine in `models.tensor`."""

import unittest

import numpy as np

from convnn.errors import AutodiffError, DimensionError, IndexRangeError
from convnn.models.gradcheck import check_gradients
from convnn.models.tensor import (
    CrossEntropy,
    Parameter,
    Tape,
    Tensor,
    conv2d,
    gather_rows,
    l2_normalize_rows,
    matmul,
    max_pool_2x2,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    softmax_rows,
)


class TapeTestCase(unittest.TestCase):
    """Tests on recording and differentiating primitives."""

    def test_square_sum_gradient(self):
        x = Tensor([1.0, 2.0, -3.0], requires_grad=True)
        with Tape() as tape:
            loss = (x * x).sum()
        tape.backward(loss)
        self.assertTrue(np.allclose(x.grad, [2.0, 4.0, -6.0]))

    def test_gradients_accumulate_over_reuse(self):
        """Test a leaf used twice receives the sum of both contributions."""
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = (x * 2.0 + x * 5.0).sum()
        tape.backward(loss)
        self.assertEqual(float(x.grad[0]), 7.0)

    def test_raise_on_non_scalar_backward(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            out = x * 3.0
        with self.assertRaises(AutodiffError):
            tape.backward(out)

    def test_raise_on_backward_without_tape(self):
        x = Tensor([1.0, 2.0])
        with self.assertRaises(AutodiffError):
            x.sum().backward()

    def test_no_recording_without_requires_grad(self):
        x = Tensor([1.0, 2.0])
        with Tape() as tape:
            (x * x).sum()
        self.assertEqual(len(tape), 0)

    def test_frozen_parameter_gets_no_gradient(self):
        w = Parameter(np.ones(3), name='w', frozen=True)
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = (w * x).sum()
        tape.backward(loss)
        self.assertIsNone(w.grad)
        self.assertTrue(np.allclose(x.grad, 1.0))

    def test_raise_on_assign_bad_shape(self):
        w = Parameter(np.zeros((2, 3)), name='w')
        with self.assertRaises(DimensionError):
            w.assign(np.zeros((3, 2)))


class PrimitiveTestCase(unittest.TestCase):
    """Tests on forward values of primitives."""

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        y = softmax_rows(rng.normal(size=(5, 7)) * 10)
        self.assertLess(np.max(np.abs(y.data.sum(axis=-1) - 1.0)), 1e-12)

    def test_softmax_large_values(self):
        """Test the row maximum is subtracted so that large scores do not overflow."""
        y = softmax_rows([[1000.0, 1000.0]])
        self.assertTrue(np.allclose(y.data, 0.5))

    def test_l2_normalize_zero_row(self):
        y = l2_normalize_rows([[3.0, 4.0], [0.0, 0.0]])
        self.assertTrue(np.allclose(y.data, [[0.6, 0.8], [0.0, 0.0]]))

    def test_pixel_unshuffle_round_trip(self):
        x = np.arange(2 * 3 * 4 * 6, dtype=float).reshape(2, 3, 4, 6)
        y = pixel_unshuffle(x, 2)
        self.assertEqual(y.shape, (2, 12, 2, 3))
        self.assertTrue(np.array_equal(pixel_shuffle(y, 2).data, x))

    def test_pixel_unshuffle_channel_order(self):
        """Test channel `c·p² + i·p + j` holds the block offset (i, j)."""
        x = np.arange(16, dtype=float).reshape(1, 4, 4)
        y = pixel_unshuffle(x, 2).data
        self.assertEqual(y[1, 0, 0], x[0, 0, 1])
        self.assertEqual(y[2, 0, 0], x[0, 1, 0])
        self.assertEqual(y[3, 1, 1], x[0, 3, 3])

    def test_raise_on_pixel_unshuffle_indivisible(self):
        with self.assertRaises(DimensionError):
            pixel_unshuffle(np.zeros((1, 5, 4)), 2)

    def test_raise_on_gather_out_of_range(self):
        v = np.zeros((4, 2))
        with self.assertRaises(IndexRangeError):
            gather_rows(v, np.array([[0, 4]] * 4))

    def test_gather_rows_values(self):
        v = np.arange(8, dtype=float).reshape(4, 2)
        idx = np.array([[3, 0], [1, 1], [2, 3], [0, 0]])
        out = gather_rows(v, idx)
        self.assertEqual(out.shape, (4, 2, 2))
        self.assertTrue(np.array_equal(out.data[0, 0], v[3]))

    def test_cross_entropy_uniform(self):
        loss = CrossEntropy.apply(Tensor(np.zeros((3, 4))), labels=np.array([0, 1, 3]))
        self.assertAlmostEqual(loss.item(), np.log(4.0), places=12)

    def test_raise_on_cross_entropy_bad_label(self):
        with self.assertRaises(IndexRangeError):
            CrossEntropy.apply(Tensor(np.zeros((2, 3))), labels=np.array([0, 3]))

    def test_max_pool_routes_gradient_to_maximum(self):
        x = Tensor(np.array([[[1.0, 4.0], [2.0, 3.0]]]), requires_grad=True)
        with Tape() as tape:
            out = max_pool_2x2(x).sum()
        tape.backward(out)
        self.assertTrue(np.array_equal(x.grad, [[[0.0, 1.0], [0.0, 0.0]]]))

    def test_indexing_accumulates_repeated_entries(self):
        x = Tensor(np.arange(3.0), requires_grad=True)
        with Tape() as tape:
            out = x[np.array([0, 0, 1])].sum()
        tape.backward(out)
        np.testing.assert_array_equal(x.grad, [2.0, 1.0, 0.0])

    def test_indexing_with_slices(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            out = (x[:, 1:] * 2.0).sum()
        tape.backward(out)
        np.testing.assert_array_equal(x.grad, [[0.0, 2.0, 2.0], [0.0, 2.0, 2.0]])


class GradientTestCase(unittest.TestCase):
    """Central-difference checks of primitive gradients."""

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_dense_chain(self):
        x = Tensor(self.rng.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(self.rng.normal(size=(3, 5)), requires_grad=True)

        def func():
            h = relu(matmul(x, w) + 0.1)
            return (softmax_rows(h) * h).sum()

        passed, err = check_gradients(func, [x, w])
        self.assertTrue(passed, msg=f'max error {err}')

    def test_gather_and_normalize(self):
        v = Tensor(self.rng.normal(size=(5, 3)), requires_grad=True)
        idx = self.rng.integers(0, 5, size=(5, 2))

        def func():
            return (gather_rows(l2_normalize_rows(v), idx) * gather_rows(v, idx)).sum()

        passed, err = check_gradients(func, [v])
        self.assertTrue(passed, msg=f'max error {err}')

    def test_conv2d(self):
        x = Tensor(self.rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        w = Tensor(self.rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        b = Tensor(self.rng.normal(size=3), requires_grad=True)

        def func():
            out = conv2d(x, w, bias=b, padding=1)
            return (out * out).mean()

        passed, err = check_gradients(func, [x, w, b])
        self.assertTrue(passed, msg=f'max error {err}')
