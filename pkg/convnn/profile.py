"""`convnn.profile.py`

Parsing of the layer and mixer descriptors of a run file, written in the specifier
syntax `name[key=value, ...]`, into the model objects they describe.

"""

import numpy as np

from convnn.errors import ConfigurationError
from convnn.models.operator import ConvNNConfig
from convnn.models.zoo import LayerKind, MiniVGG, MiniViT, MixerKind
from convnn.utils import get_specifier_dict

CONVNN_KEYS = [
    'k',
    'rho',
    'normalize',
    'metric',
    'strategy',
    'r',
    'seed_policy',
    'positional',
    'aggregation',
    'patch',
    'bias',
]

LAYER_KEYS = {
    'conv': ['kernel'],
    'convnn': CONVNN_KEYS + ['projections'],
    'branching': CONVNN_KEYS + ['lambda', 'kernel', 'projections'],
}

MIXER_KEYS = {
    'attention': ['cosine'],
    'local': ['window', 'cosine'],
    'kvt': ['k', 'cosine'],
    'sparse': ['window', 'stride', 'cosine'],
    'convnn': CONVNN_KEYS + ['unit'],
}

ALLOWED_ARCHS = ['vgg', 'vit']

# Layers aggregate like a regular convolution; token mixers modulate like attention.
LAYER_CONVNN_DEFAULTS = {'k': 9, 'aggregation': 'regular'}
MIXER_CONVNN_DEFAULTS = {'k': 9, 'rho': 'softmax', 'aggregation': 'depthwise'}


def _parse_specifier(spec, kind_name, allowed_keys, base_key=None):

    try:
        spec_dict = get_specifier_dict(spec, name_key='kind', base_key=base_key)
    except (TypeError, ValueError) as err:
        msg = f'Invalid {kind_name} descriptor {spec!r}: {err}'
        raise ConfigurationError(msg) from err

    kind = spec_dict.pop('kind', None)
    if kind not in allowed_keys:
        allowed_fmt = ', '.join([f'{i!r}' for i in allowed_keys])
        raise ConfigurationError(f'{kind_name.capitalize()} kind {kind!r} not known. '
                                 f'Allowed {kind_name} kinds are: {allowed_fmt}.')

    bad_keys = list(set(spec_dict.keys()) - set(allowed_keys[kind]))
    if bad_keys:
        bad_keys_fmt = ', '.join([f'"{i}"' for i in sorted(bad_keys)])
        raise ConfigurationError(f'Unknown options for {kind_name} {kind!r}: '
                                 f'{bad_keys_fmt}.')

    return kind, spec_dict


def _convnn_config(options, defaults):
    kwargs = {**defaults, **{k: v for k, v in options.items() if k in CONVNN_KEYS}}
    return ConvNNConfig(**kwargs)


def parse_layer(spec):
    """Parse a mini-VGG layer descriptor.

    Examples
    --------
    >>> parse_layer('branching[lambda=0.5, strategy=random, r=16]')
    LayerKind(kind='branching', lam=0.5, cfg=ConvNNConfig(k=9, ...))

    """

    kind, opts = _parse_specifier(spec, 'layer', LAYER_KEYS, base_key='lambda')
    cfg = None
    if kind != 'conv':
        cfg = _convnn_config(opts, LAYER_CONVNN_DEFAULTS)
    return LayerKind(kind, lam=opts.get('lambda'), cfg=cfg, kernel=opts.get('kernel', 3),
                     projections=opts.get('projections', 'identity'))


def parse_mixer(spec, defaults=None):
    """Parse a mini-ViT token mixer descriptor, e.g. `kvt[k=3]` or `local[window=4]`.

    `defaults` fill ConvNN options the descriptor leaves out.

    """

    kind, opts = _parse_specifier(spec, 'mixer', MIXER_KEYS)
    if kind != 'convnn':
        return MixerKind(kind, **opts)

    unit = bool(opts.get('unit', False))
    defaults = {**MIXER_CONVNN_DEFAULTS, **(defaults or {})}
    if unit:
        defaults['bias'] = False
    return MixerKind('convnn', cfg=_convnn_config(opts, defaults), unit_aggregation=unit)


class ModelSpec(object):
    """A model architecture with its mixing layer or token mixer."""

    __slots__ = ['_arch', '_layer', '_mixer', '_image_size', '_num_classes', '_dropout']

    def __init__(self, arch, image_size, num_classes, layer=None, mixer=None,
                 dropout=0.0):
        if arch not in ALLOWED_ARCHS:
            allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_ARCHS])
            raise ConfigurationError(f'Model architecture {arch!r} not known. Allowed '
                                     f'architectures are: {allowed_fmt}.')
        self._arch = arch
        self._layer = layer
        self._mixer = mixer
        self._image_size = image_size
        self._num_classes = num_classes
        self._dropout = dropout

    def __repr__(self):
        return (f'{self.__class__.__name__}(arch={self.arch!r}, layer={self.layer!r}, '
                f'mixer={self.mixer!r})')

    @property
    def arch(self):
        return self._arch

    @property
    def layer(self):
        return self._layer

    @property
    def mixer(self):
        return self._mixer

    @property
    def image_size(self):
        return self._image_size

    @property
    def num_classes(self):
        return self._num_classes

    @property
    def dropout(self):
        return self._dropout

    def build(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if self.arch == 'vgg':
            return MiniVGG(self.layer, rng, image_size=self.image_size,
                           num_classes=self.num_classes, dropout=self.dropout)
        return MiniViT(self.mixer, rng, image_size=self.image_size,
                       num_classes=self.num_classes, dropout=self.dropout)

    def as_dict(self):
        return {
            'arch': self.arch,
            'layer': None if self.layer is None else self.layer.as_dict(),
            'mixer': None if self.mixer is None else self.mixer.as_dict(),
            'image_size': self.image_size,
            'num_classes': self.num_classes,
            'dropout': self.dropout,
        }


def parse_model(section, image_size, num_classes, dropout=0.0):
    """Parse the `model` section of a training run file."""

    arch = section['arch']
    layer = mixer = None
    if arch == 'vgg':
        layer = parse_layer(section['layer'])
    elif arch == 'vit':
        mixer = parse_mixer(section['mixer'])
    return ModelSpec(arch, image_size, num_classes, layer=layer, mixer=mixer,
                     dropout=dropout)

