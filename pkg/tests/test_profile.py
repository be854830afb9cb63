"""Module containing unit tests on parsing layer and mixer descriptors."""

import unittest

import numpy as np

from convnn.errors import ConfigurationError
from convnn.models.tensor import Tensor
from convnn.models.zoo import MiniVGG, MiniViT
from convnn.profile import ModelSpec, parse_layer, parse_mixer, parse_model


class ParseLayerTestCase(unittest.TestCase):
    """Tests on `parse_layer`."""

    def test_conv(self):
        layer = parse_layer('conv[kernel=5]')
        self.assertEqual((layer.kind, layer.kernel), ('conv', 5))

    def test_branching_base_value_is_lambda(self):
        layer = parse_layer('branching[0.25, strategy=random, r=16]')
        self.assertEqual(layer.lam, 0.25)
        self.assertEqual((layer.cfg.strategy, layer.cfg.r), ('random', 16))

    def test_layer_defaults(self):
        cfg = parse_layer('convnn').cfg
        self.assertEqual((cfg.k, cfg.aggregation), (9, 'regular'))

    def test_raise_on_unknown_kind(self):
        with self.assertRaises(ConfigurationError):
            parse_layer('pool[2]')

    def test_raise_on_unknown_option(self):
        with self.assertRaises(ConfigurationError) as ctx:
            parse_layer('convnn[k=9, window=3]')
        self.assertIn('"window"', str(ctx.exception))

    def test_raise_on_malformed(self):
        with self.assertRaises(ConfigurationError):
            parse_layer('convnn[k=9')


class ParseMixerTestCase(unittest.TestCase):
    """Tests on `parse_mixer`."""

    def test_attention_family(self):
        self.assertEqual(parse_mixer('kvt[k=3]').options, {'k': 3})
        self.assertEqual(parse_mixer('local[window=4]').options, {'window': 4})

    def test_convnn_mixer_defaults(self):
        mixer = parse_mixer('convnn[strategy=random, r=32]')
        cfg = mixer.options['cfg']
        self.assertEqual((cfg.rho, cfg.aggregation, cfg.r), ('softmax', 'depthwise', 32))

    def test_unit_aggregation_drops_bias(self):
        mixer = parse_mixer('convnn[k=16, unit=true]')
        self.assertTrue(mixer.options['unit_aggregation'])
        self.assertFalse(mixer.options['cfg'].bias)

    def test_caller_defaults(self):
        mixer = parse_mixer('convnn', defaults={'k': 4})
        self.assertEqual(mixer.options['cfg'].k, 4)

    def test_raise_on_convnn_option_for_attention(self):
        with self.assertRaises(ConfigurationError):
            parse_mixer('attention[k=3]')


class ModelSpecTestCase(unittest.TestCase):
    """Tests on `ModelSpec` and `parse_model`."""

    def test_build_vgg(self):
        spec = parse_model({'arch': 'vgg', 'layer': 'conv'}, 8, 2)
        model = spec.build(np.random.default_rng(0))
        self.assertIsInstance(model, MiniVGG)
        x = Tensor(np.zeros((1, 3, 8, 8)))
        self.assertEqual(model(x).shape, (1, 2))

    def test_build_vit(self):
        spec = parse_model({'arch': 'vit', 'mixer': 'attention'}, 16, 10)
        self.assertIsInstance(spec.build(), MiniViT)
        self.assertIsNone(spec.layer)

    def test_as_dict(self):
        spec = parse_model({'arch': 'vgg', 'layer': 'branching[0.5]'}, 8, 2, dropout=0.1)
        spec_dict = spec.as_dict()
        self.assertEqual(spec_dict['layer']['lam'], 0.5)
        self.assertIsNone(spec_dict['mixer'])
        self.assertEqual(spec_dict['dropout'], 0.1)

    def test_raise_on_unknown_arch(self):
        with self.assertRaises(ConfigurationError):
            ModelSpec('resnet', 8, 2)
