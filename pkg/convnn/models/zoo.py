"""`convnn.models.zoo.py`

Two small architectures: a VGG-style CNN whose mixing layers can be convolutions,
ConvNN layers or branching layers, and a ViT-style transformer with swappable token
mixers.

"""

import warnings

import numpy as np

from convnn.errors import ConvNNConfigError, DimensionError
from convnn.models.layers import (
    Attention,
    Branching,
    Conv2d,
    ConvNN2d,
    ConvNNMixer,
    Dropout,
    KVTAttention,
    LayerNorm,
    Linear,
    LocalWindowAttention,
    Module,
    SparseAttention,
)
from convnn.models.operator import AttentionDescriptor, ConvNNConfig
from convnn.models.tensor import (
    Parameter,
    gelu,
    max_pool_2x2,
    pixel_unshuffle,
    relu,
    swap_last,
)

VGG_CHANNELS = [16, 32, 64, 64]
VGG_IMAGE_SIZES = [8, 16, 32]
VGG_HIDDEN = 64

VIT_IMAGE_SIZE = 16
VIT_PATCH = 4
VIT_DIM = 64
VIT_MLP = 128
VIT_DEPTH = 4

ALLOWED_LAYER_KINDS = ['conv', 'convnn', 'branching']
ALLOWED_MIXER_KINDS = ['attention', 'local', 'kvt', 'sparse', 'convnn']


class LayerKind(object):
    """The mixing layer used in every block of `MiniVGG`."""

    __slots__ = ['_kind', '_lam', '_cfg', '_kernel', '_projections']

    def __init__(self, kind='conv', lam=None, cfg=None, kernel=3, projections='identity'):
        if kind not in ALLOWED_LAYER_KINDS:
            allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_LAYER_KINDS])
            raise ConvNNConfigError(f'Layer kind {kind!r} not known. Allowed layer kinds '
                                    f'are: {allowed_fmt}.')
        if kind == 'branching':
            if lam is None or not 0 <= lam <= 1:
                raise ConvNNConfigError(f'Branching ratio λ must be in [0, 1], not '
                                        f'{lam!r}.')
        self._kind = kind
        self._lam = lam
        self._cfg = cfg or ConvNNConfig(k=9, aggregation='regular')
        self._kernel = kernel
        self._projections = projections

    def __repr__(self):
        return (f'{self.__class__.__name__}(kind={self.kind!r}, lam={self.lam!r}, '
                f'cfg={self.cfg!r})')

    @property
    def kind(self):
        return self._kind

    @property
    def lam(self):
        return self._lam

    @property
    def cfg(self):
        return self._cfg

    @property
    def kernel(self):
        return self._kernel

    @property
    def projections(self):
        return self._projections

    def build(self, in_channels, out_channels, rng):
        if self.kind == 'conv':
            return Conv2d(in_channels, out_channels, self.kernel, rng)
        if self.kind == 'convnn':
            return ConvNN2d(in_channels, out_channels, self.cfg, rng,
                            projections=self.projections)
        return Branching(in_channels, out_channels, self.lam, self.cfg, rng,
                         kernel=self.kernel, projections=self.projections)

    def as_dict(self):
        return {
            'kind': self.kind,
            'lam': self.lam,
            'cfg': self.cfg.as_dict(),
            'kernel': self.kernel,
            'projections': self.projections,
        }


class MixerKind(object):
    """The token mixer used in every block of `MiniViT`.

    Options by kind: "attention" (`cosine`), "local" (`window`), "kvt" (`k`), "sparse"
    (`window`, `stride`) and "convnn" (`cfg`, `unit_aggregation`).

    """

    __slots__ = ['_kind', '_options']

    def __init__(self, kind='attention', **options):
        if kind not in ALLOWED_MIXER_KINDS:
            allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_MIXER_KINDS])
            raise ConvNNConfigError(f'Mixer kind {kind!r} not known. Allowed mixer kinds '
                                    f'are: {allowed_fmt}.')
        required = {
            'attention': [],
            'local': ['window'],
            'kvt': ['k'],
            'sparse': ['window', 'stride'],
            'convnn': ['cfg'],
        }[kind]
        miss = [i for i in required if i not in options]
        if miss:
            miss_fmt = ', '.join([f'"{i}"' for i in miss])
            raise ConvNNConfigError(f'Missing options for mixer {kind!r}: {miss_fmt}.')
        for name in ('window', 'k', 'stride'):
            if name in options and (int(options[name]) != options[name] or
                                    options[name] < 1):
                raise ConvNNConfigError(f'Mixer option `{name}` must be a positive '
                                        f'integer, not {options[name]!r}.')
        self._kind = kind
        self._options = options

    def __repr__(self):
        return f'{self.__class__.__name__}(kind={self.kind!r}, options={self.options!r})'

    @property
    def kind(self):
        return self._kind

    @property
    def options(self):
        return self._options

    def build(self, dim, rng, grid=None):
        opts = self.options
        cosine = opts.get('cosine', False)
        if self.kind == 'attention':
            return Attention(dim, rng, cosine=cosine)
        if self.kind == 'local':
            return LocalWindowAttention(dim, opts['window'], rng, cosine=cosine)
        if self.kind == 'kvt':
            return KVTAttention(dim, opts['k'], rng, cosine=cosine)
        if self.kind == 'sparse':
            return SparseAttention(dim, opts['window'], opts['stride'], rng,
                                   cosine=cosine)
        return ConvNNMixer(dim, opts['cfg'], rng, grid=grid,
                           unit_aggregation=opts.get('unit_aggregation', False))

    def flop_descriptor(self):
        """The `ConvNNConfig` or `AttentionDescriptor` used for FLOP accounting."""
        if self.kind == 'convnn':
            return self.options['cfg']
        return AttentionDescriptor(self.kind, k=self.options.get('k'),
                                   window=self.options.get('window'),
                                   stride=self.options.get('stride'),
                                   normalize=self.options.get('cosine', False))

    def as_dict(self):
        opts = {k: (v.as_dict() if isinstance(v, ConvNNConfig) else v)
                for k, v in self.options.items()}
        return {'kind': self.kind, **opts}


def pooling_schedule(image_size, num_blocks=len(VGG_CHANNELS), min_tokens=9):
    """Whether each block is followed by 2×2 pooling: pool only while the pooled grid
    still holds at least `min_tokens` positions."""
    schedule = []
    size = image_size
    for _ in range(num_blocks):
        pool = (size // 2) ** 2 >= min_tokens
        schedule.append(pool)
        if pool:
            size //= 2
    return schedule


class MiniVGG(Module):
    """Four blocks (mixing layer, ReLU, optional 2×2 max-pool) with 16, 32, 64 and 64
    channels, then global average pooling and a two-layer classifier."""

    def __init__(self, layer, rng, image_size=8, in_channels=3, num_classes=10,
                 dropout=0.0):
        super().__init__()
        if image_size not in VGG_IMAGE_SIZES:
            raise DimensionError(f'Unsupported input size {image_size}. Supported sizes '
                                 f'are: {VGG_IMAGE_SIZES!r}.')
        self.layer_kind = layer
        self.image_size = image_size
        self.in_channels = in_channels
        self.pools = pooling_schedule(image_size, min_tokens=layer.cfg.k)
        for idx, pool in enumerate(self.pools[:-1]):
            if not pool:
                warnings.warn(f'Pooling after block {idx} is skipped to keep at least '
                              f'{layer.cfg.k} positions per grid.')

        self.blocks = []
        c_in = in_channels
        for c_out in VGG_CHANNELS:
            self.blocks.append(layer.build(c_in, c_out, rng))
            c_in = c_out
        self.hidden = Linear(c_in, VGG_HIDDEN, rng)
        self.dropout = Dropout(dropout)
        self.classifier = Linear(VGG_HIDDEN, num_classes, rng)

    def forward(self, x, rng=None):
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        if x.shape[-3:] != (self.in_channels, self.image_size, self.image_size):
            raise DimensionError(f'Input {list(x.shape)} does not match the model input '
                                 f'size {self.image_size}.')
        for block, pool in zip(self.blocks, self.pools):
            x = relu(block(x, rng=rng))
            if pool:
                x = max_pool_2x2(x)
        x = x.mean(axis=(-2, -1))
        x = self.dropout(relu(self.hidden(x)), rng=rng)
        logits = self.classifier(x)
        if single:
            logits = logits.reshape(logits.shape[1:])
        return logits


class ViTBlock(Module):

    def __init__(self, dim, mlp_dim, mixer, rng, dropout=0.0, grid=None):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.mixer = mixer.build(dim, rng, grid=grid)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_dim, rng)
        self.fc2 = Linear(mlp_dim, dim, rng)
        self.dropout = Dropout(dropout)

    def forward(self, x, rng=None):
        x = x + self.mixer(self.norm1(x), rng=rng)
        hidden = self.dropout(gelu(self.fc1(self.norm2(x))), rng=rng)
        return x + self.fc2(hidden)


class MiniViT(Module):
    """4×4 patches of a 16×16 image as 16 tokens of width 64 with a learned positional
    embedding, four pre-norm blocks, and a mean-pooled classification head."""

    def __init__(self, mixer, rng, image_size=VIT_IMAGE_SIZE, in_channels=3,
                 num_classes=10, dropout=0.0):
        super().__init__()
        if image_size != VIT_IMAGE_SIZE:
            raise DimensionError(f'Unsupported input size {image_size}. The mini-ViT '
                                 f'takes {VIT_IMAGE_SIZE}×{VIT_IMAGE_SIZE} images.')
        self.mixer_kind = mixer
        self.in_channels = in_channels
        side = image_size // VIT_PATCH
        self.grid = (side, side)
        self.embed = Linear(in_channels * VIT_PATCH ** 2, VIT_DIM, rng)
        self.pos = Parameter(rng.normal(0.0, 0.02, (side * side, VIT_DIM)))
        self.blocks = [ViTBlock(VIT_DIM, VIT_MLP, mixer, rng, dropout=dropout,
                                grid=self.grid) for _ in range(VIT_DEPTH)]
        self.norm = LayerNorm(VIT_DIM)
        self.head = Linear(VIT_DIM, num_classes, rng)

    @property
    def num_tokens(self):
        return self.grid[0] * self.grid[1]

    def forward(self, x, rng=None):
        single = x.ndim == 3
        if single:
            x = x.reshape((1,) + x.shape)
        if x.shape[-3:] != (self.in_channels, VIT_IMAGE_SIZE, VIT_IMAGE_SIZE):
            raise DimensionError(f'Input {list(x.shape)} does not match the model input '
                                 f'[{self.in_channels}, {VIT_IMAGE_SIZE}, '
                                 f'{VIT_IMAGE_SIZE}].')
        patches = pixel_unshuffle(x, VIT_PATCH)
        lead = patches.shape[:-3]
        tokens = swap_last(patches.reshape(lead + (patches.shape[-3], self.num_tokens)))
        x = self.embed(tokens) + self.pos
        for block in self.blocks:
            x = block(x, rng=rng)
        logits = self.head(self.norm(x).mean(axis=-2))
        if single:
            logits = logits.reshape(logits.shape[1:])
        return logits


def mini_vgg(layer=None, image_size=8, num_classes=10, dropout=0.0, rng=None):
    """Build a `MiniVGG`.

    Parameters
    ----------
    layer : LayerKind, optional
        Mixing layer of every block; convolution by default.
    image_size : int
        One of 8, 16 or 32.
    rng : numpy.random.Generator

    """
    rng = rng if rng is not None else np.random.default_rng(0)
    return MiniVGG(layer or LayerKind('conv'), rng, image_size=image_size,
                   num_classes=num_classes, dropout=dropout)


def mini_vit(mixer=None, num_classes=10, dropout=0.0, rng=None):
    """Build a `MiniViT` with the given token mixer (full attention by default)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return MiniViT(mixer or MixerKind('attention'), rng, num_classes=num_classes,
                   dropout=dropout)
