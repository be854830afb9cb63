"""`convnn.models.layers.py`

Trainable layers: the `Module` base class, dense/convolution/normalisation layers, the
ConvNN image layer, the hybrid branching layer, and the token mixers of the mini-ViT.

"""

import math

import numpy as np

from convnn.errors import CheckpointError, ConvNNConfigError, DimensionError
from convnn.models.operator import (
    AggregationParams,
    ProjectionParams,
    convnn_forward,
    convnn_forward_2d,
)
from convnn.models.tensor import (
    Parameter,
    Tensor,
    concat,
    conv2d,
    l2_normalize_rows,
    layer_norm,
    matmul,
    pixel_shuffle,
    softmax_rows,
    swap_last,
)

MASKED = -1e30


class Module(object):
    """Base class of layers and models.

    Parameters, sub-modules, lists of sub-modules and operator parameter bundles
    assigned as attributes are discovered in assignment order; their dotted attribute
    paths are the parameter names used by `state_dict`.

    """

    def __init__(self):
        self._training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    @property
    def training(self):
        return self._training

    def train(self, mode=True):
        self._training = mode
        for _, module in self.named_modules():
            module._training = mode
        return self

    def eval(self):
        return self.train(False)

    def named_modules(self, prefix=''):
        for attr, value in vars(self).items():
            if isinstance(value, Module):
                yield prefix + attr, value
                yield from value.named_modules(prefix + attr + '.')
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        name = f'{prefix}{attr}.{idx}'
                        yield name, item
                        yield from item.named_modules(name + '.')

    def named_parameters(self, prefix=''):
        """Get (name, Parameter) pairs, frozen parameters included."""
        out = []
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                out.append((prefix + attr, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + attr + '.'))
            elif isinstance(value, AggregationParams):
                for key, param in value.weights.items():
                    out.append((f'{prefix}{attr}.{key}', param))
                if value.bias is not None:
                    out.append((f'{prefix}{attr}.bias', value.bias))
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f'{prefix}{attr}.{idx}.'))
        for name, param in out:
            param.name = name
        return out

    def parameters(self, include_frozen=False):
        return [p for _, p in self.named_parameters()
                if include_frozen or not p.frozen]

    def num_parameters(self, include_frozen=False):
        """Count learnable entries (and frozen ones too, if `include_frozen`)."""
        return int(sum(p.size for p in self.parameters(include_frozen=include_frozen)))

    def num_frozen_parameters(self):
        return int(sum(p.size for _, p in self.named_parameters() if p.frozen))

    def zero_grad(self):
        for p in self.parameters(include_frozen=True):
            p.zero_grad()

    def state_dict(self):
        return {name: p.numpy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        """Assign parameter values by name.

        Returns
        -------
        missing : list of str
            Parameter names with no entry in `state`.
        unexpected : list of str
            Entries of `state` matching no parameter.

        """

        params = dict(self.named_parameters())
        missing = [i for i in params if i not in state]
        unexpected = [i for i in state if i not in params]
        if strict and (missing or unexpected):
            msg = 'State does not match the model parameters.'
            if missing:
                msg += ' Missing: ' + ', '.join([f'"{i}"' for i in missing]) + '.'
            if unexpected:
                msg += ' Unexpected: ' + ', '.join([f'"{i}"' for i in unexpected]) + '.'
            raise CheckpointError(msg)
        for name, param in params.items():
            if name in state:
                try:
                    param.assign(state[name])
                except DimensionError as err:
                    raise CheckpointError(str(err)) from err

        return missing, unexpected


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, shape)


class Linear(Module):

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        bound = 1 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    """Stride-1 2D convolution with zero-same padding."""

    def __init__(self, in_channels, out_channels, kernel, rng, bias=True):
        super().__init__()
        if kernel % 2 != 1:
            raise ConvNNConfigError(f'Convolution kernel must be odd, not {kernel}.')
        bound = 1 / math.sqrt(in_channels * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound,
                                         (out_channels, in_channels, kernel, kernel)))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.padding = kernel // 2

    def forward(self, x, rng=None):
        return conv2d(x, self.weight, self.bias, padding=self.padding)


class LayerNorm(Module):

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, eps=self.eps) * self.gamma + self.beta


class Dropout(Module):
    """Inverted dropout; active only in training mode with a generator supplied."""

    def __init__(self, rate=0.0):
        super().__init__()
        if not 0 <= rate < 1:
            raise ConvNNConfigError(f'Dropout rate must be in [0, 1), not {rate}.')
        self.rate = rate

    def forward(self, x, rng=None):
        if not self.training or self.rate == 0 or rng is None:
            return x
        keep = rng.random(x.shape) >= self.rate
        return x * Tensor(keep / (1 - self.rate))


class ConvNN2d(Module):
    """ConvNN over the pixels of a channel-first image.

    With a patch size p > 1, the operator runs on the pixel-unshuffled grid with
    `out_channels·p²` outputs, which are pixel-shuffled back to full resolution.

    """

    def __init__(self, in_channels, out_channels, cfg, rng, projections='identity'):
        super().__init__()
        if projections not in ('identity', 'learned'):
            raise ConvNNConfigError(f'Projections must be "identity" or "learned", not '
                                    f'{projections!r}.')
        self.cfg = cfg
        self.out_channels = out_channels
        c_tok = in_channels * cfg.patch ** 2
        c_qk = c_tok + cfg.positional_width(2)
        c_v = c_qk if cfg.positional == 'similarity-and-values' else c_tok
        if projections == 'learned':
            self.wq = Parameter(_uniform(rng, 1 / math.sqrt(c_qk), (c_qk, c_tok)))
            self.wk = Parameter(_uniform(rng, 1 / math.sqrt(c_qk), (c_qk, c_tok)))
            self.wv = Parameter(_uniform(rng, 1 / math.sqrt(c_v), (c_v, c_tok)))
            c_v = c_tok
        else:
            self.wq = self.wk = self.wv = None
        agg_out = out_channels * cfg.patch ** 2
        self.agg = AggregationParams.init(cfg.aggregation, c_v, agg_out, cfg.k, rng,
                                          bias=cfg.bias)

    def forward(self, x, rng=None):
        proj = ProjectionParams(self.wq, self.wk, self.wv)
        out = convnn_forward_2d(x, self.cfg, proj, self.agg,
                                rng=rng if self.training else None)
        if self.cfg.patch > 1:
            out = pixel_shuffle(out, self.cfg.patch)
        return out


def split_channels(lam, out_channels):
    """Channel shares (conv, ConvNN) of a branching layer: the conv branch gets
    ⌊(1 − λ)·out + ½⌋ channels."""
    if not 0 <= lam <= 1:
        raise ConvNNConfigError(f'Branching ratio λ must be in [0, 1], not {lam}.')
    conv = int(math.floor((1 - lam) * out_channels + 0.5))
    return conv, out_channels - conv


class Branching(Module):
    """Parallel convolution and ConvNN branches sharing the output channels in the
    ratio (1 − λ) : λ, concatenated and fused by a 1×1 convolution."""

    def __init__(self, in_channels, out_channels, lam, cfg, rng, kernel=3,
                 projections='identity'):
        super().__init__()
        self.lam = lam
        self.conv_channels, self.convnn_channels = split_channels(lam, out_channels)
        self.conv = None
        self.convnn = None
        if self.conv_channels:
            self.conv = Conv2d(in_channels, self.conv_channels, kernel, rng)
        if self.convnn_channels:
            self.convnn = ConvNN2d(in_channels, self.convnn_channels, cfg, rng,
                                   projections=projections)
        self.fuse = Conv2d(out_channels, out_channels, 1, rng)

    def forward(self, x, rng=None):
        parts = []
        if self.conv is not None:
            parts.append(self.conv(x))
        if self.convnn is not None:
            parts.append(self.convnn(x, rng=rng))
        return self.fuse(concat(parts, axis=-3))


def _init_qkvo(module, dim, rng):
    bound = 1 / math.sqrt(dim)
    module.wq = Parameter(_uniform(rng, bound, (dim, dim)))
    module.wk = Parameter(_uniform(rng, bound, (dim, dim)))
    module.wv = Parameter(_uniform(rng, bound, (dim, dim)))
    module.wo = Parameter(_uniform(rng, bound, (dim, dim)))


class MaskedAttention(Module):
    """Single-head attention over tokens [..., n, d] with an optional per-query key
    mask. Subclasses define the mask."""

    def __init__(self, dim, rng, cosine=False):
        super().__init__()
        _init_qkvo(self, dim, rng)
        self.cosine = cosine

    def key_mask(self, scores):
        """Boolean [n, m] or [..., n, m] array of allowed keys, or None for all."""
        return None

    def forward(self, x, rng=None):
        q = matmul(x, self.wq)
        k = matmul(x, self.wk)
        v = matmul(x, self.wv)
        if self.cosine:
            q, k = l2_normalize_rows(q), l2_normalize_rows(k)
            scores = matmul(q, swap_last(k))
        else:
            scores = matmul(q, swap_last(k)) * (1 / math.sqrt(q.shape[-1]))
        mask = self.key_mask(scores)
        if mask is not None:
            scores = scores + Tensor(np.where(mask, 0.0, MASKED))
        return matmul(matmul(softmax_rows(scores), v), self.wo)


class Attention(MaskedAttention):
    """Full attention; scaled dot product, or cosine similarity without scaling."""


class LocalWindowAttention(MaskedAttention):
    """Attention within fixed, non-overlapping windows of `window` consecutive
    tokens."""

    def __init__(self, dim, window, rng, cosine=False):
        super().__init__(dim, rng, cosine=cosine)
        if window < 1:
            raise ConvNNConfigError(f'Attention window must be positive, not {window}.')
        self.window = window

    def key_mask(self, scores):
        block = np.arange(scores.shape[-1]) // self.window
        return block[:, None] == block[None, :]


class SparseAttention(MaskedAttention):
    """Strided sparse attention: each query sees keys within `window // 2` positions
    of itself plus every `stride`-th key."""

    def __init__(self, dim, window, stride, rng, cosine=False):
        super().__init__(dim, rng, cosine=cosine)
        if window < 1 or stride < 1:
            raise ConvNNConfigError(f'Sparse attention window and stride must be '
                                    f'positive, not {window} and {stride}.')
        self.window = window
        self.stride = stride

    def key_mask(self, scores):
        pos = np.arange(scores.shape[-1])
        local = np.abs(pos[:, None] - pos[None, :]) <= self.window // 2
        strided = (pos % self.stride == 0)[None, :]
        return local | strided


class KVTAttention(MaskedAttention):
    """Attention where each query keeps only its `k` highest-scoring keys."""

    def __init__(self, dim, k, rng, cosine=False):
        super().__init__(dim, rng, cosine=cosine)
        if k < 1:
            raise ConvNNConfigError(f'KVT top-k must be positive, not {k}.')
        self.k = k

    def key_mask(self, scores):
        m = scores.shape[-1]
        if self.k > m:
            raise ConvNNConfigError(f'KVT top-k of {self.k} exceeds the {m} keys.')
        order = np.argsort(-scores.data, axis=-1, kind='stable')[..., :self.k]
        mask = np.zeros(scores.shape, dtype=bool)
        np.put_along_axis(mask, order, True, axis=-1)
        return mask


class ConvNNMixer(Module):
    """ConvNN token mixer with the same `wq`/`wk`/`wv`/`wo` parameters as the attention
    mixers, so that parameters can be exchanged between them."""

    def __init__(self, dim, cfg, rng, grid=None, unit_aggregation=False):
        super().__init__()
        _init_qkvo(self, dim, rng)
        self.cfg = cfg
        self.grid = grid
        if cfg.positional != 'none':
            raise ConvNNConfigError('The ConvNN token mixer does not append coordinate '
                                    'channels; use a positional embedding instead.')
        if cfg.patch != 1:
            raise ConvNNConfigError('The ConvNN token mixer works on tokens; `patch` '
                                    'must be 1.')
        if cfg.out_channels not in (None, dim):
            raise ConvNNConfigError(f'The ConvNN token mixer keeps the model width '
                                    f'{dim}; `out_channels` cannot be '
                                    f'{cfg.out_channels}.')
        if unit_aggregation:
            if cfg.aggregation != 'depthwise' or cfg.bias:
                raise ConvNNConfigError('Frozen unit aggregation requires depthwise '
                                        'aggregation without bias.')
            self.agg = AggregationParams.unit(dim, cfg.k)
        else:
            self.agg = AggregationParams.init(cfg.aggregation, dim, dim, cfg.k, rng,
                                              bias=cfg.bias)

    def forward(self, x, rng=None):
        proj = ProjectionParams(self.wq, self.wk, self.wv)
        out = convnn_forward(x, self.cfg, proj, self.agg, grid=self.grid,
                             rng=rng if self.training else None)
        return matmul(out, self.wo)
