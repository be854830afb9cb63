"""Module containing unit tests on validating run sections before any compute."""

import unittest

from convnn.config import RunConfig
from convnn.errors import ConfigurationError, ConvNNConfigError, DatasetError
from convnn.models.operator import ConvNNConfig
from convnn.validation import (
    check_candidate_count,
    validate_bench,
    validate_grid,
    validate_train,
)


def train_config(model=None, train=None, dataset=None):
    dataset = {'kind': 'synthetic-texture', 'n_train': 8, 'n_test': 4, **(dataset or {})}
    sections = {'dataset': dataset, 'train': train or {}}
    if model:
        sections['model'] = model
    return RunConfig('train', sections)


class CandidateCountTestCase(unittest.TestCase):

    def test_candidate_counts(self):
        self.assertEqual(check_candidate_count(ConvNNConfig(k=9), (4, 4)), 16)
        cfg = ConvNNConfig(k=3, strategy='random', r=32)
        self.assertEqual(check_candidate_count(cfg, (4, 4)), 16)
        cfg = ConvNNConfig(k=3, strategy='spatial', r=4)
        self.assertEqual(check_candidate_count(cfg, (4, 4)), 4)

    def test_raise_on_too_few_candidates(self):
        with self.assertRaises(ConvNNConfigError):
            check_candidate_count(ConvNNConfig(k=9, strategy='random', r=8), (4, 4))


class ValidateTrainTestCase(unittest.TestCase):
    """Tests on `validate_train`."""

    def test_plan(self):
        plan = validate_train(train_config(train={'lr': [1e-3, 1e-4], 'epochs': 2}))
        self.assertEqual([i.lr for i in plan.train_cfgs], [1e-3, 1e-4])
        self.assertEqual(plan.train_cfgs[1].epochs, 2)
        self.assertEqual(plan.dataset.n_train, 8)
        self.assertEqual(plan.model.arch, 'vgg')
        self.assertEqual(set(plan.as_dict()), {'train', 'dataset', 'model'})

    def test_raise_on_lambda_out_of_range(self):
        with self.assertRaises(ConvNNConfigError):
            validate_train(train_config(model={'layer': 'branching[1.5]'}))

    def test_raise_on_missing_dataset_path(self):
        with self.assertRaises(DatasetError):
            validate_train(train_config(dataset={'kind': 'cifar10-subset',
                                                 'path': '/no/such/cifar/dir'}))

    def test_raise_on_non_numeric_option(self):
        with self.assertRaises(ConfigurationError):
            validate_train(train_config(train={'epochs': 'two'}))

    def test_raise_on_empty_lr(self):
        with self.assertRaises(ConfigurationError):
            validate_train(train_config(train={'lr': []}))

    def test_raise_on_k_beyond_pooled_grid(self):
        """Test the spatial candidate count is checked on every pooled block grid."""
        model = {'layer': 'convnn[k=9, strategy=spatial, r=4]'}
        with self.assertRaises(ConvNNConfigError):
            validate_train(train_config(model=model))

    def test_raise_on_even_kernel(self):
        with self.assertRaises(ConfigurationError):
            validate_train(train_config(model={'layer': 'conv[kernel=4]'}))

    def test_raise_on_vit_image_size(self):
        with self.assertRaises(ConfigurationError):
            validate_train(train_config(model={'arch': 'vit', 'mixer': 'attention'}))

    def test_raise_on_vit_kvt_beyond_tokens(self):
        model = {'arch': 'vit', 'mixer': 'kvt[k=17]'}
        with self.assertRaises(ConvNNConfigError):
            validate_train(train_config(model=model, dataset={'image_size': 16}))


class ValidateGridTestCase(unittest.TestCase):
    """Tests on `validate_grid`."""

    def grid(self, **kwargs):
        return RunConfig('equiv', {'grid': kwargs}).get('grid')

    def test_default_points(self):
        points, conv_grids = validate_grid(self.grid())
        self.assertEqual(len(points), 9)
        self.assertEqual([i['k'] for i in points if i['n'] == 16], [1, 3, 16])
        self.assertEqual(conv_grids, [])

    def test_head_widths_default_to_c(self):
        points, _ = validate_grid(self.grid(n=4, c=3, k=1))
        self.assertEqual(points, [{'n': 4, 'c': 3, 'h': 3, 'v': 3, 'k': 1, 'seed': 0}])

    def test_seeds(self):
        points, _ = validate_grid(self.grid(n=4, k=1, seeds=3, seed=10))
        self.assertEqual([i['seed'] for i in points], [10, 11, 12])

    def test_half_n_and_duplicates(self):
        points, _ = validate_grid(self.grid(n=8, k=['n/2', 4]))
        self.assertEqual([i['k'] for i in points], [4])

    def test_conv_grids(self):
        _, conv_grids = validate_grid(self.grid(conv=[5, '6x8']))
        self.assertEqual(conv_grids, [(5, 5), (6, 8)])

    def test_raise_on_k_beyond_n(self):
        with self.assertRaises(ConfigurationError):
            validate_grid(self.grid(n=4, k=5))

    def test_raise_on_small_conv_grid(self):
        for value in (4, '4x9', 'axb'):
            with self.subTest(value=value):
                with self.assertRaises(ConfigurationError):
                    validate_grid(self.grid(conv=value))

    def test_raise_on_bad_n(self):
        with self.assertRaises(ConfigurationError):
            validate_grid(self.grid(n=[4, 0]))


class ValidateBenchTestCase(unittest.TestCase):
    """Tests on `validate_bench`."""

    def bench(self, **kwargs):
        return RunConfig('bench', {'bench': kwargs}).get('bench')

    def test_default_points(self):
        points = validate_bench(self.bench())
        self.assertEqual([(i.label, i.strategy) for i in points],
                         [('attention', None), ('convnn', 'all'), ('convnn', 'random')])
        self.assertEqual(points[0].grid, (14, 14))
        self.assertIsNone(points[1].r)
        self.assertEqual(points[2].r, 32)

    def test_duplicate_mixers_collapse(self):
        points = validate_bench(self.bench(mixer=['attention', 'attention']))
        self.assertEqual(len(points), 1)

    def test_descriptor_options_win(self):
        points = validate_bench(self.bench(mixer=['convnn[strategy=random, r=16]'],
                                           strategy=['all']))
        self.assertEqual([(i.strategy, i.r) for i in points], [('random', 16)])

    def test_non_square_n(self):
        points = validate_bench(self.bench(mixer=['attention'], n=[10]))
        self.assertIsNone(points[0].grid)

    def test_raise_on_few_repeats(self):
        with self.assertRaises(ConfigurationError):
            validate_bench(self.bench(repeats=4))

    def test_raise_on_unknown_strategy(self):
        with self.assertRaises(ConfigurationError):
            validate_bench(self.bench(strategy=['nearest']))

    def test_raise_on_kvt_beyond_n(self):
        with self.assertRaises(ConvNNConfigError):
            validate_bench(self.bench(mixer=['kvt[k=20]'], n=[16]))
