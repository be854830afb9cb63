"""Module containing unit tests on the optimiser, metrics and the epoch loop."""

import unittest

import numpy as np

from convnn.errors import ConvNNConfigError
from convnn.models.datasets import Dataset, gen_synthetic
from convnn.models.operator import ConvNNConfig
from convnn.models.tensor import Parameter, Tape, Tensor
from convnn.models.training import (
    AdamW,
    EpochRecord,
    RunMetrics,
    TrainConfig,
    adamw_step,
    clip_grad_norm,
    cross_entropy,
    train,
)
from convnn.models.zoo import LayerKind, mini_vgg


class LossTestCase(unittest.TestCase):

    def test_uniform_logits(self):
        loss = cross_entropy(Tensor(np.zeros((4, 5))), [0, 1, 2, 3])
        self.assertAlmostEqual(loss.item(), np.log(5), places=12)

    def test_large_logits_stay_finite(self):
        loss = cross_entropy(Tensor(np.array([[1000.0, 0.0]])), [0])
        self.assertAlmostEqual(loss.item(), 0.0, places=12)


class ClipTestCase(unittest.TestCase):
    """Tests on `clip_grad_norm`."""

    def test_scaled_to_max_norm(self):
        grads, norm = clip_grad_norm([np.array([3.0]), np.array([4.0])], 1.0)
        self.assertEqual(norm, 5.0)
        self.assertTrue(np.allclose(np.concatenate(grads), [0.6, 0.8]))

    def test_small_gradients_untouched(self):
        grads, norm = clip_grad_norm([np.array([0.3, 0.4])], 1.0)
        self.assertAlmostEqual(norm, 0.5)
        self.assertTrue(np.array_equal(grads[0], [0.3, 0.4]))

    def test_raise_on_non_positive_norm(self):
        with self.assertRaises(ValueError):
            clip_grad_norm([np.ones(2)], 0.0)


class AdamWTestCase(unittest.TestCase):
    """Tests on `adamw_step` and `AdamW`."""

    def test_decoupled_weight_decay(self):
        """Test a zero gradient leaves only the weight decay shrinkage."""
        cfg = TrainConfig(lr=0.1, weight_decay=0.5)
        params, _ = adamw_step([np.array([2.0])], [np.array([0.0])], {}, 1, cfg)
        self.assertAlmostEqual(float(params[0][0]), 2.0 * (1 - 0.05))

    def test_first_step_size_is_lr(self):
        cfg = TrainConfig(lr=0.01, weight_decay=0.0)
        params, state = adamw_step([np.array([1.0, 1.0])], [np.array([0.5, -8.0])], {},
                                   1, cfg)
        self.assertTrue(np.allclose(params[0], [0.99, 1.01], atol=1e-9))
        self.assertEqual(set(state), {'m', 'v'})

    def test_raise_on_step_zero(self):
        with self.assertRaises(ValueError):
            adamw_step([np.ones(1)], [np.ones(1)], {}, 0, TrainConfig())

    def test_optimiser_step(self):
        param = Parameter(np.array([1.0, -2.0]), name='w')
        optimiser = AdamW([param], TrainConfig(lr=0.1, weight_decay=0.0, clip_norm=1.0))
        with Tape() as tape:
            loss = (param * param).sum()
        tape.backward(loss)
        norm = optimiser.step()
        self.assertAlmostEqual(norm, np.sqrt(20.0))
        self.assertEqual(optimiser.t, 1)
        np.testing.assert_allclose(param.data, [0.9, -1.9], atol=1e-6)
        optimiser.zero_grad()
        self.assertIsNone(param.grad)


class TrainConfigTestCase(unittest.TestCase):

    def test_raise_on_bad_values(self):
        for kwargs in ({'lr': 0}, {'epochs': 0}, {'batch': -1}, {'weight_decay': -0.1},
                       {'dropout': 1.0}):
            with self.subTest(**kwargs):
                with self.assertRaises(ConvNNConfigError):
                    TrainConfig(**kwargs)


class RunMetricsTestCase(unittest.TestCase):
    """Tests on `RunMetrics`."""

    def test_csv(self):
        metrics = RunMetrics(seed=7)
        metrics.add(EpochRecord(1, 'train', 0.5, 0.75))
        metrics.add(EpochRecord(1, 'test', 0.25, 1.0, wall_seconds=1.5))
        self.assertEqual(metrics.to_csv(), (
            'epoch,split,loss,accuracy,wall_seconds,seed\n'
            '1,train,0.5,0.75,,7\n'
            '1,test,0.25,1.0,1.500000,7\n'
        ))

    def test_finalise(self):
        metrics = RunMetrics()
        metrics.add(EpochRecord(1, 'train', 0.5, 0.75))
        metrics.add(EpochRecord(1, 'test', 0.25, 0.5))
        metrics.add(EpochRecord(2, 'train', 0.4, 0.8))
        metrics.finalise(num_parameters=10)
        self.assertEqual(metrics.summary['final_train_loss'], 0.4)
        self.assertEqual(metrics.summary['final_test_accuracy'], 0.5)
        self.assertEqual(metrics.summary['num_parameters'], 10)

    def test_raise_on_out_of_order(self):
        metrics = RunMetrics()
        metrics.add(EpochRecord(2, 'train', 0.5, 0.5))
        with self.assertRaises(ValueError):
            metrics.add(EpochRecord(1, 'train', 0.5, 0.5))
        with self.assertRaises(ValueError):
            metrics.add(EpochRecord(2, 'train', 0.5, 0.5))

    def test_raise_on_bad_accuracy(self):
        with self.assertRaises(ValueError):
            RunMetrics().add(EpochRecord(1, 'train', 0.5, 1.5))


class TrainTestCase(unittest.TestCase):
    """Tests on the epoch loop."""

    def setUp(self):
        self.dataset = gen_synthetic(16, 8, image_size=8, seed=0)
        self.cfg = TrainConfig(lr=1e-3, epochs=2, batch=8, seed=3)

    def run_once(self):
        model = mini_vgg(image_size=8, num_classes=2, rng=np.random.default_rng(0))
        return train(model, self.dataset, self.cfg), model

    def test_records(self):
        metrics, model = self.run_once()
        self.assertEqual([(i.epoch, i.split) for i in metrics.records],
                         [(1, 'train'), (1, 'test'), (2, 'train'), (2, 'test')])
        self.assertTrue(all(i.wall_seconds is None for i in metrics.records))
        self.assertEqual(metrics.summary['num_parameters'], model.num_parameters())
        self.assertEqual(metrics.seed, 3)

    def test_deterministic(self):
        first, _ = self.run_once()
        second, _ = self.run_once()
        self.assertEqual(first.to_csv(), second.to_csv())

    def test_timing(self):
        self.cfg = TrainConfig(lr=1e-3, epochs=1, batch=8, timing=True)
        metrics, _ = self.run_once()
        self.assertTrue(all(i.wall_seconds >= 0 for i in metrics.records))


def brightness_dataset(n_train, n_test, seed=0):
    """Two classes of 8×8 noise images offset by -0.5 and +0.5."""
    rng = np.random.default_rng(seed)
    splits = []
    for num in (n_train, n_test):
        labels = rng.permutation(np.arange(num) % 2)
        images = rng.normal(0.0, 0.1, (num, 3, 8, 8)) + (labels - 0.5)[:, None, None, None]
        splits.extend([images, labels])
    return Dataset(*splits, num_classes=2)


class LearningTestCase(unittest.TestCase):
    """Tests that a short run lowers the loss and beats chance for each layer kind."""

    def test_learns_easy_task(self):
        dataset = brightness_dataset(32, 16)
        cfg = TrainConfig(lr=1e-2, weight_decay=0.0, epochs=8, batch=8, seed=1)
        layers = [
            LayerKind('conv'),
            LayerKind('convnn', cfg=ConvNNConfig(k=9, aggregation='regular',
                                                 strategy='random', r=16)),
            LayerKind('branching', lam=0.5, cfg=ConvNNConfig(k=9, aggregation='regular',
                                                             strategy='random', r=16)),
        ]
        for layer in layers:
            with self.subTest(kind=layer.kind):
                model = mini_vgg(layer, image_size=8, num_classes=2,
                                 rng=np.random.default_rng(0))
                metrics = train(model, dataset, cfg)
                first, last = metrics.records[0], metrics.last('train')
                self.assertLess(last.loss, first.loss)
                self.assertGreater(last.accuracy, 0.75)
                self.assertGreater(metrics.last('test').accuracy, 0.5)
