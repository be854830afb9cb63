"""Module containing unit tests on layers and the mini-VGG and mini-ViT models."""

import unittest

import numpy as np

from convnn.errors import CheckpointError, ConvNNConfigError, DimensionError
from convnn.models.layers import (
    Attention,
    Branching,
    ConvNNMixer,
    Dropout,
    KVTAttention,
    LocalWindowAttention,
    split_channels,
)
from convnn.models.operator import ConvNNConfig
from convnn.models.tensor import Tensor
from convnn.models.zoo import (
    LayerKind,
    MixerKind,
    mini_vgg,
    mini_vit,
    pooling_schedule,
)


class BranchingTestCase(unittest.TestCase):
    """Tests on channel splitting and the branching layer."""

    def test_split_channels(self):
        self.assertEqual(split_channels(0.5, 16), (8, 8))
        self.assertEqual(split_channels(0.125, 16), (14, 2))
        self.assertEqual(split_channels(0.0, 16), (16, 0))
        self.assertEqual(split_channels(1.0, 16), (0, 16))

    def test_raise_on_lambda_out_of_range(self):
        with self.assertRaises(ConvNNConfigError):
            split_channels(1.5, 16)
        with self.assertRaises(ConvNNConfigError):
            LayerKind('branching', lam=-0.1)

    def test_extreme_lambdas_drop_a_branch(self):
        cfg = ConvNNConfig(k=9, aggregation='regular')
        rng = np.random.default_rng(0)
        only_conv = Branching(3, 8, 0.0, cfg, rng)
        only_convnn = Branching(3, 8, 1.0, cfg, rng)
        self.assertIsNone(only_conv.convnn)
        self.assertIsNone(only_convnn.conv)

    def test_output_shape(self):
        cfg = ConvNNConfig(k=9, aggregation='regular', strategy='random', r=16)
        layer = Branching(3, 8, 0.5, cfg, np.random.default_rng(0))
        out = layer(Tensor(np.random.default_rng(1).normal(size=(2, 3, 8, 8))))
        self.assertEqual(out.shape, (2, 8, 8, 8))


class MiniVGGTestCase(unittest.TestCase):
    """Tests on the mini-VGG model."""

    def setUp(self):
        self.x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 8, 8)))

    def test_pooling_schedule(self):
        self.assertEqual(pooling_schedule(8), [True, False, False, False])
        self.assertEqual(pooling_schedule(16), [True, True, False, False])
        self.assertEqual(pooling_schedule(32), [True, True, True, False])

    def test_forward_shapes(self):
        layers = [
            LayerKind('conv'),
            LayerKind('convnn', cfg=ConvNNConfig(k=9, aggregation='regular')),
            LayerKind('branching', lam=0.5, cfg=ConvNNConfig(k=9, aggregation='regular',
                                                             strategy='random', r=12)),
        ]
        for layer in layers:
            with self.subTest(kind=layer.kind):
                model = mini_vgg(layer, image_size=8, num_classes=3)
                self.assertEqual(model(self.x).shape, (2, 3))
                self.assertEqual(model(Tensor(self.x.data[0])).shape, (3,))

    def test_parameter_count_constant_in_lambda(self):
        counts = set()
        for lam in (0.0, 0.25, 0.5, 0.875, 1.0):
            layer = LayerKind('branching', lam=lam,
                              cfg=ConvNNConfig(k=9, aggregation='regular'))
            counts.add(mini_vgg(layer).num_parameters())
        self.assertEqual(len(counts), 1)

    def test_raise_on_unsupported_size(self):
        with self.assertRaises(DimensionError):
            mini_vgg(image_size=12)

    def test_raise_on_input_mismatch(self):
        model = mini_vgg(image_size=16)
        with self.assertRaises(DimensionError):
            model(self.x)

    def test_state_dict_round_trip(self):
        model = mini_vgg(rng=np.random.default_rng(0))
        other = mini_vgg(rng=np.random.default_rng(1))
        other.load_state_dict(model.state_dict())
        self.assertTrue(np.array_equal(model.eval()(self.x).data,
                                       other.eval()(self.x).data))

    def test_raise_on_state_dict_mismatch(self):
        model = mini_vgg()
        state = model.state_dict()
        state.pop(next(iter(state)))
        with self.assertRaises(CheckpointError):
            model.load_state_dict(state)


class TokenMixerTestCase(unittest.TestCase):
    """Tests on the attention-family token mixers."""

    def setUp(self):
        self.x = Tensor(np.random.default_rng(0).normal(size=(16, 8)))

    def test_convnn_mixer_equals_cosine_attention(self):
        cfg = ConvNNConfig(k=16, rho='softmax', aggregation='depthwise', bias=False)
        convnn = ConvNNMixer(8, cfg, np.random.default_rng(5), unit_aggregation=True)
        attention = Attention(8, np.random.default_rng(5), cosine=True)
        diff = np.max(np.abs(convnn(self.x).data - attention(self.x).data))
        self.assertLess(diff, 1e-10)

    def test_unit_aggregation_is_frozen(self):
        cfg = ConvNNConfig(k=4, rho='softmax', bias=False)
        mixer = ConvNNMixer(8, cfg, np.random.default_rng(0), unit_aggregation=True)
        self.assertEqual(mixer.num_frozen_parameters(), 8 * 4)
        self.assertEqual(mixer.num_parameters(), 4 * 8 * 8)

    def test_raise_on_unit_aggregation_with_bias(self):
        with self.assertRaises(ConvNNConfigError):
            ConvNNMixer(8, ConvNNConfig(k=4), np.random.default_rng(0),
                        unit_aggregation=True)

    def test_kvt_with_all_keys_is_attention(self):
        kvt = KVTAttention(8, 16, np.random.default_rng(2))
        attention = Attention(8, np.random.default_rng(2))
        self.assertTrue(np.allclose(kvt(self.x).data, attention(self.x).data))

    def test_local_window_ignores_other_windows(self):
        mixer = LocalWindowAttention(8, 4, np.random.default_rng(3))
        changed = self.x.numpy()
        changed[8:] += 1.0
        self.assertTrue(np.allclose(mixer(self.x).data[:8], mixer(Tensor(changed)).data[:8]))

    def test_raise_on_missing_mixer_option(self):
        with self.assertRaises(ConvNNConfigError):
            MixerKind('kvt')

    def test_mini_vit_forward_shapes(self):
        x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 16, 16)))
        mixers = [
            MixerKind('attention'),
            MixerKind('local', window=4),
            MixerKind('kvt', k=8),
            MixerKind('sparse', window=3, stride=4),
            MixerKind('convnn', cfg=ConvNNConfig(k=9, rho='softmax')),
        ]
        for mixer in mixers:
            with self.subTest(kind=mixer.kind):
                self.assertEqual(mini_vit(mixer, num_classes=4)(x).shape, (2, 4))


class DropoutTestCase(unittest.TestCase):
    """Tests on `Dropout`."""

    def test_identity_in_eval_mode(self):
        drop = Dropout(0.5).eval()
        x = Tensor(np.ones(100))
        self.assertTrue(np.array_equal(drop(x, rng=np.random.default_rng(0)).data, x.data))

    def test_inverted_scaling_in_training(self):
        drop = Dropout(0.5)
        out = drop(Tensor(np.ones(1000)), rng=np.random.default_rng(0)).data
        self.assertTrue(set(np.unique(out).tolist()) <= {0.0, 2.0})
        self.assertTrue(0 < np.sum(out == 0) < 1000)

    def test_raise_on_bad_rate(self):
        with self.assertRaises(ConvNNConfigError):
            Dropout(1.0)
