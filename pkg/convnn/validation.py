"""`convnn.validation.py`

Validation of every knob of a run before any compute is allocated. Each `validate_*`
function turns the sections of a `RunConfig` into the objects its command works on.

"""

import itertools
import math
from pathlib import Path

from convnn.errors import ConfigurationError, ConvNNConfigError, DatasetError
from convnn.models.datasets import DatasetDescriptor
from convnn.models.neighbors import candidates_spatial
from convnn.models.training import TrainConfig
from convnn.models.zoo import VIT_IMAGE_SIZE, VIT_PATCH, pooling_schedule
from convnn.profile import parse_mixer, parse_model
from convnn.utils import as_list

ALLOWED_STRATEGIES = ['all', 'random', 'spatial']
MIN_BENCH_REPEATS = 5
MIN_BENCH_WARMUP = 1


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_ints(section, key, values, minimum=1):
    bad = [i for i in values if not _is_int(i) or i < minimum]
    if bad:
        bad_fmt = ', '.join([f'{i!r}' for i in bad])
        raise ConfigurationError(f'Values of `{section}.{key}` must be integers of at '
                                 f'least {minimum}, but found: {bad_fmt}.')
    return values


def _check_numbers(section, values):
    bad = {k: v for k, v in values.items() if not _is_number(v)}
    if bad:
        bad_fmt = ', '.join([f'"{section}.{k}"' for k in bad])
        raise ConfigurationError(f'Expected numbers for: {bad_fmt}.')


def check_candidate_count(cfg, grid):
    """Check that `cfg.k` neighbours can be selected on a grid.

    Parameters
    ----------
    cfg : ConvNNConfig
    grid : tuple of int
        `(length,)` or `(rows, cols)`.

    Returns
    -------
    int
        The number of candidates per query.

    """

    n = math.prod(grid)
    if cfg.strategy == 'all':
        count = n
    elif cfg.strategy == 'random':
        count = min(cfg.r, n)
    else:
        count = len(candidates_spatial(grid, cfg.r))
    if cfg.k > count:
        grid_fmt = '×'.join(str(i) for i in grid)
        raise ConvNNConfigError(f'k={cfg.k} exceeds the {count} candidates of strategy '
                                f'{cfg.strategy!r} on a {grid_fmt} grid.')
    return count


class TrainPlan(object):
    """Everything `convnn train` needs: one `TrainConfig` per learning rate, the
    dataset and the model."""

    __slots__ = ['_train_cfgs', '_dataset', '_model']

    def __init__(self, train_cfgs, dataset, model):
        self._train_cfgs = train_cfgs
        self._dataset = dataset
        self._model = model

    @property
    def train_cfgs(self):
        return self._train_cfgs

    @property
    def dataset(self):
        return self._dataset

    @property
    def model(self):
        return self._model

    def as_dict(self):
        return {
            'train': [i.as_dict() for i in self.train_cfgs],
            'dataset': self.dataset.as_dict(),
            'model': self.model.as_dict(),
        }


def _check_model_grids(model):

    if model.arch == 'vit':
        if model.image_size != VIT_IMAGE_SIZE:
            raise ConfigurationError(f'The "vit" model takes {VIT_IMAGE_SIZE}×'
                                     f'{VIT_IMAGE_SIZE} images, but the dataset image '
                                     f'size is {model.image_size}.')
        side = VIT_IMAGE_SIZE // VIT_PATCH
        mixer = model.mixer
        if mixer.kind == 'convnn':
            check_candidate_count(mixer.options['cfg'], (side, side))
        elif mixer.kind == 'kvt' and mixer.options['k'] > side * side:
            raise ConvNNConfigError(f'KVT top-k of {mixer.options["k"]} exceeds the '
                                    f'{side * side} tokens.')
        return

    layer = model.layer
    if not _is_int(layer.kernel) or layer.kernel < 1 or layer.kernel % 2 == 0:
        raise ConfigurationError(f'Convolution kernel must be a positive odd integer, not '
                                 f'{layer.kernel!r}.')
    if layer.kind == 'conv' or (layer.kind == 'branching' and layer.lam == 0):
        return
    cfg = layer.cfg
    size = model.image_size
    for pool in pooling_schedule(model.image_size, min_tokens=cfg.k):
        if size % cfg.patch:
            raise ConvNNConfigError(f'Patch size {cfg.patch} does not divide the '
                                    f'{size}×{size} grid of a ConvNN block.')
        side = size // cfg.patch
        check_candidate_count(cfg, (side, side))
        if pool:
            size //= 2


def validate_train(run_config):
    """Validate the `train`, `dataset` and `model` sections.

    Returns
    -------
    TrainPlan

    """

    train = run_config.get('train')
    lrs = as_list(train['lr'])
    if not lrs:
        raise ConfigurationError('`train.lr` must hold at least one learning rate.')
    _check_numbers('train', {k: v for k, v in train.items()
                             if k not in ('lr', 'seed', 'timing')})
    _check_numbers('train', {f'lr[{idx}]': i for idx, i in enumerate(lrs)})
    if not _is_int(train['seed']):
        raise ConfigurationError(f'`train.seed` must be an integer, not '
                                 f'{train["seed"]!r}.')

    opts = {k: v for k, v in train.items() if k != 'lr'}
    train_cfgs = [TrainConfig(lr=lr, **opts) for lr in lrs]

    dataset_sec = run_config.get('dataset')
    dataset = DatasetDescriptor(
        dataset_sec['kind'],
        n_train=dataset_sec['n_train'],
        n_test=dataset_sec['n_test'],
        image_size=dataset_sec['image_size'],
        seed=dataset_sec['seed'],
        path=dataset_sec['path'],
    )
    if dataset.path is not None and not Path(dataset.path).expanduser().is_dir():
        raise DatasetError(f'Dataset path does not exist: "{dataset.path}".')

    model = parse_model(run_config.get('model'), dataset.image_size, dataset.num_classes,
                        dropout=train_cfgs[0].dropout)
    _check_model_grids(model)

    return TrainPlan(train_cfgs, dataset, model)


def _resolve_k(value, n):
    if value == 'n':
        return n
    if value == 'n/2':
        return max(1, n // 2)
    if not _is_int(value) or value < 1:
        raise ConfigurationError(f'Values of `grid.k` must be positive integers, "n" or '
                                 f'"n/2", not {value!r}.')
    if value > n:
        raise ConfigurationError(f'`grid.k` value {value} exceeds n={n}.')
    return value


def _parse_conv_grid(value):
    if _is_int(value):
        grid = (value, value)
    elif isinstance(value, str) and 'x' in value:
        try:
            grid = tuple(int(i) for i in value.lower().split('x'))
        except ValueError:
            grid = None
    else:
        grid = None
    if grid is None or len(grid) != 2 or min(grid) < 5:
        raise ConfigurationError(f'Values of `grid.conv` must be a side length or a '
                                 f'"rowsxcols" string with both extents at least 5, not '
                                 f'{value!r}.')
    return grid


def validate_grid(section):
    """Validate the `grid` section of `convnn equiv`.

    Returns
    -------
    points : list of dict
        One `(n, c, h, v, k, seed)` point per attention reduction check.
    conv_grids : list of tuple of int
        One `(rows, cols)` grid per convolution reduction check.

    """

    ns = _check_ints('grid', 'n', as_list(section['n']))
    cs = _check_ints('grid', 'c', as_list(section['c']))
    hs = None if section['h'] is None else _check_ints('grid', 'h', as_list(section['h']))
    vs = None if section['v'] is None else _check_ints('grid', 'v', as_list(section['v']))
    ks = as_list(section['k'])
    if not _is_int(section['seeds']) or section['seeds'] < 0:
        raise ConfigurationError(f'`grid.seeds` must be a non-negative integer, not '
                                 f'{section["seeds"]!r}.')
    if not _is_int(section['seed']):
        raise ConfigurationError(f'`grid.seed` must be an integer, not '
                                 f'{section["seed"]!r}.')
    if not _is_number(section['perturbation']) or section['perturbation'] < 0:
        raise ConfigurationError(f'`grid.perturbation` must be a non-negative number, '
                                 f'not {section["perturbation"]!r}.')
    seeds = [section['seed'] + i for i in range(section['seeds'])]

    points = []
    for n, c in itertools.product(ns, cs):
        k_values = []
        for k in ks:
            k = _resolve_k(k, n)
            if k not in k_values:
                k_values.append(k)
        for h, v, k, seed in itertools.product(hs or [c], vs or [c], k_values, seeds):
            points.append({'n': n, 'c': c, 'h': h, 'v': v, 'k': k, 'seed': seed})

    conv_grids = [_parse_conv_grid(i) for i in as_list(section['conv'])]
    return points, conv_grids


class BenchPoint(object):
    """One mixer at one token shape of a benchmark sweep."""

    __slots__ = ['_label', '_mixer', '_n', '_c', '_grid']

    def __init__(self, label, mixer, n, c, grid=None):
        self._label = label
        self._mixer = mixer
        self._n = n
        self._c = c
        self._grid = grid

    def __repr__(self):
        return (f'{self.__class__.__name__}(mixer={self.label!r}, n={self.n}, c={self.c}, '
                f'k={self.k!r}, r={self.r!r}, strategy={self.strategy!r})')

    @property
    def label(self):
        return self._label

    @property
    def mixer(self):
        return self._mixer

    @property
    def n(self):
        return self._n

    @property
    def c(self):
        return self._c

    @property
    def grid(self):
        return self._grid

    @property
    def k(self):
        if self.mixer.kind == 'convnn':
            return self.mixer.options['cfg'].k
        return self.mixer.options.get('k')

    @property
    def r(self):
        if self.mixer.kind == 'convnn' and self.mixer.options['cfg'].strategy != 'all':
            return self.mixer.options['cfg'].r
        return None

    @property
    def strategy(self):
        if self.mixer.kind == 'convnn':
            return self.mixer.options['cfg'].strategy
        return None

    def key(self):
        return (self.label, self.n, self.c, self.k, self.r, self.strategy,
                repr(self.mixer.as_dict()))


def _square_grid(n):
    side = math.isqrt(n)
    return (side, side) if side * side == n else None


def validate_bench(section):
    """Validate the `bench` section of `convnn bench`.

    ConvNN mixers are swept over every combination of `k`, `r` and `strategy`, except
    for options their descriptor fixes. Token counts that are perfect squares are laid
    out on a square grid.

    Returns
    -------
    list of BenchPoint

    """

    specs = as_list(section['mixer'])
    ns = _check_ints('bench', 'n', as_list(section['n']))
    cs = _check_ints('bench', 'c', as_list(section['c']))
    ks = _check_ints('bench', 'k', as_list(section['k']))
    rs = _check_ints('bench', 'r', as_list(section['r']))
    strategies = as_list(section['strategy'])
    bad = [i for i in strategies if i not in ALLOWED_STRATEGIES]
    if bad:
        bad_fmt = ', '.join([f'"{i}"' for i in bad])
        allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_STRATEGIES])
        raise ConfigurationError(f'Unknown values of `bench.strategy`: {bad_fmt}. Allowed '
                                 f'values are: {allowed_fmt}.')
    if not _is_int(section['repeats']) or section['repeats'] < MIN_BENCH_REPEATS:
        raise ConfigurationError(f'`bench.repeats` must be an integer of at least '
                                 f'{MIN_BENCH_REPEATS}, not {section["repeats"]!r}.')
    if not _is_int(section['warmup']) or section['warmup'] < MIN_BENCH_WARMUP:
        raise ConfigurationError(f'`bench.warmup` must be an integer of at least '
                                 f'{MIN_BENCH_WARMUP}, not {section["warmup"]!r}.')
    if not _is_int(section['seed']):
        raise ConfigurationError(f'`bench.seed` must be an integer, not '
                                 f'{section["seed"]!r}.')

    points = []
    seen = set()
    for spec, n, c in itertools.product(specs, ns, cs):
        grid = _square_grid(n)
        if parse_mixer(spec).kind == 'convnn':
            mixers = [parse_mixer(spec, defaults={'k': k, 'r': r, 'strategy': s})
                      for k, r, s in itertools.product(ks, rs, strategies)]
        else:
            mixers = [parse_mixer(spec)]

        for mixer in mixers:
            label = mixer.kind if mixer.kind == 'convnn' else spec.replace(' ', '')
            point = BenchPoint(label, mixer, n, c, grid=grid)
            if point.key() in seen:
                continue
            seen.add(point.key())
            if mixer.kind == 'convnn':
                check_candidate_count(mixer.options['cfg'], grid or (n,))
            elif mixer.kind == 'kvt' and mixer.options['k'] > n:
                raise ConvNNConfigError(f'KVT top-k of {mixer.options["k"]} exceeds '
                                        f'n={n}.')
            points.append(point)

    return points
