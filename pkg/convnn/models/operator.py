"""`convnn.models.operator.py`

The ConvNN operator: similarity, neighbour selection and modulation, neighbourhood
assembly, and stride-k convolutional aggregation. Also includes its 2D wrapper and
FLOP accounting for the operator and the attention variants it is compared with.

"""

import math

import numpy as np

from convnn.errors import ConvNNConfigError, DimensionError, ValidationError
from convnn.models.neighbors import (
    candidates_all,
    candidates_random,
    candidates_spatial,
    knn,
    positional_coordinates,
    similarity,
)
from convnn.models.tensor import (
    Conv1dDepthwise,
    Conv1dRegular,
    Parameter,
    Tensor,
    as_tensor,
    concat,
    gather_rows,
    matmul,
    pixel_unshuffle,
    softmax_rows,
    swap_last,
    take_rows,
)

ALLOWED_RHO = ['ones', 'softmax']
ALLOWED_POSITIONAL = ['none', 'similarity-only', 'similarity-and-values']
ALLOWED_AGGREGATION = ['regular', 'depthwise', 'depthwise-separable']
ALLOWED_ATTENTION = ['attention', 'kvt', 'local', 'sparse']

EVAL_SEED = 0


def _check_allowed(name, value, allowed):
    if value not in allowed:
        allowed_fmt = ', '.join([f'{i!r}' for i in allowed])
        raise ConvNNConfigError(f'Value {value!r} of `{name}` not known. Allowed values '
                                f'are: {allowed_fmt}.')


class ConvNNConfig(object):
    """Knobs of the ConvNN operator.

    Parameters
    ----------
    k : int
        Neighbours per feature (also the aggregation kernel size and stride).
    rho : str
        Modulation: "ones" or "softmax".
    normalize : bool
        Whether Q and K rows are ℓ2-normalised before scoring.
    metric : str
        "dot" or "euclidean".
    strategy : str
        Candidate strategy: "all", "random" or "spatial".
    r : int
        Candidate count (random), stride (1D spatial) or square sub-grid step² (2D
        spatial). Ignored for strategy "all".
    seed_policy : str or int
        "per-pass" draws a fresh candidate seed from the run generator on every
        training forward pass (evaluation uses a fixed seed); an integer fixes the seed.
    positional : str
        "none", "similarity-only" or "similarity-and-values".
    aggregation : str
        "regular", "depthwise" or "depthwise-separable".
    patch : int
        Pixel-unshuffle factor applied by the 2D wrapper.
    out_channels : int, optional
        Output width. Depthwise aggregation requires it to equal the value width.
    bias : bool
        Whether the aggregation adds a per-channel bias.

    """

    __slots__ = ['_k', '_rho', '_normalize', '_metric', '_strategy', '_r', '_seed_policy',
                 '_positional', '_aggregation', '_patch', '_out_channels', '_bias']

    def __init__(self, k=9, rho='ones', normalize=True, metric='dot', strategy='all',
                 r=32, seed_policy='per-pass', positional='none', aggregation='depthwise',
                 patch=1, out_channels=None, bias=True):

        _check_allowed('rho', rho, ALLOWED_RHO)
        _check_allowed('strategy', strategy, ['all', 'random', 'spatial'])
        _check_allowed('metric', metric, ['dot', 'euclidean'])
        _check_allowed('positional', positional, ALLOWED_POSITIONAL)
        _check_allowed('aggregation', aggregation, ALLOWED_AGGREGATION)

        if int(k) != k or k < 1:
            raise ConvNNConfigError(f'`k` must be a positive integer, not {k!r}.')
        if int(r) != r or r < 1:
            raise ConvNNConfigError(f'`r` must be a positive integer, not {r!r}.')
        if int(patch) != patch or patch < 1:
            raise ConvNNConfigError(f'`patch` must be a positive integer, not {patch!r}.')
        if seed_policy != 'per-pass' and (isinstance(seed_policy, bool) or
                                          not isinstance(seed_policy, (int, np.integer))
                                          or seed_policy < 0):
            raise ConvNNConfigError(f'`seed_policy` must be "per-pass" or a non-negative '
                                    f'integer seed, not {seed_policy!r}.')
        if out_channels is not None and (int(out_channels) != out_channels or
                                         out_channels < 1):
            raise ConvNNConfigError(f'`out_channels` must be a positive integer, not '
                                    f'{out_channels!r}.')

        self._k = int(k)
        self._rho = rho
        self._normalize = bool(normalize)
        self._metric = metric
        self._strategy = strategy
        self._r = int(r)
        self._seed_policy = seed_policy if seed_policy == 'per-pass' else int(seed_policy)
        self._positional = positional
        self._aggregation = aggregation
        self._patch = int(patch)
        self._out_channels = None if out_channels is None else int(out_channels)
        self._bias = bool(bias)

    def __repr__(self):
        args = ', '.join(f'{k}={v!r}' for k, v in self.as_dict().items())
        return f'{self.__class__.__name__}({args})'

    def __eq__(self, other):
        return isinstance(other, ConvNNConfig) and self.as_dict() == other.as_dict()

    @property
    def k(self):
        return self._k

    @property
    def rho(self):
        return self._rho

    @property
    def normalize(self):
        return self._normalize

    @property
    def metric(self):
        return self._metric

    @property
    def strategy(self):
        return self._strategy

    @property
    def r(self):
        return self._r

    @property
    def seed_policy(self):
        return self._seed_policy

    @property
    def positional(self):
        return self._positional

    @property
    def aggregation(self):
        return self._aggregation

    @property
    def patch(self):
        return self._patch

    @property
    def out_channels(self):
        return self._out_channels

    @property
    def bias(self):
        return self._bias

    def positional_width(self, ndim):
        """Number of coordinate channels appended on a grid of dimension `ndim`."""
        return 0 if self.positional == 'none' else ndim

    def as_dict(self):
        return {
            'k': self.k,
            'rho': self.rho,
            'normalize': self.normalize,
            'metric': self.metric,
            'strategy': self.strategy,
            'r': self.r,
            'seed_policy': self.seed_policy,
            'positional': self.positional,
            'aggregation': self.aggregation,
            'patch': self.patch,
            'out_channels': self.out_channels,
            'bias': self.bias,
        }

    def replace(self, **kwargs):
        """Get a copy with some fields changed."""
        return ConvNNConfig(**{**self.as_dict(), **kwargs})


class ProjectionParams(object):
    """Query, key and value projections; a projection of None is the identity."""

    __slots__ = ['_wq', '_wk', '_wv']

    def __init__(self, wq=None, wk=None, wv=None):
        self._wq = wq
        self._wk = wk
        self._wv = wv
        if wq is not None and wk is not None and wq.shape[-1] != wk.shape[-1]:
            raise DimensionError(f'Query projection {list(wq.shape)} and key projection '
                                 f'{list(wk.shape)} must have the same output width.')

    def __repr__(self):
        return f'{self.__class__.__name__}(mode={self.mode!r})'

    @property
    def wq(self):
        return self._wq

    @property
    def wk(self):
        return self._wk

    @property
    def wv(self):
        return self._wv

    @property
    def mode(self):
        if self._wq is None and self._wk is None and self._wv is None:
            return 'identity'
        return 'learned'

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def init(cls, c_in, h, v, rng, c_qk=None, names=('wq', 'wk', 'wv')):
        """Random learned projections, uniform in ±1/√fan_in.

        `c_qk` is the input width of Q and K when it differs from that of V (coordinate
        channels appended for similarity only).

        """
        c_qk = c_in if c_qk is None else c_qk
        bound_qk = 1 / math.sqrt(c_qk)
        bound_v = 1 / math.sqrt(c_in)
        wq = Parameter(rng.uniform(-bound_qk, bound_qk, (c_qk, h)), name=names[0])
        wk = Parameter(rng.uniform(-bound_qk, bound_qk, (c_qk, h)), name=names[1])
        wv = Parameter(rng.uniform(-bound_v, bound_v, (c_in, v)), name=names[2])
        return cls(wq, wk, wv)

    @staticmethod
    def apply(x, weight):
        if weight is None:
            return x
        if x.shape[-1] != weight.shape[0]:
            raise DimensionError(f'Features {list(x.shape)} do not match projection '
                                 f'{list(weight.shape)}.')
        return matmul(x, weight)

    def parameters(self):
        return [i for i in (self._wq, self._wk, self._wv) if i is not None]


class AggregationParams(object):
    """Weights of the stride-k aggregation.

    `weights` maps "weight" ([out, v, k], regular), "depth" ([v, k], depthwise and
    depthwise-separable) and "point" ([v, out], depthwise-separable) to parameters.

    """

    __slots__ = ['_kind', '_weights', '_bias', '_frozen']

    def __init__(self, kind, weights, bias=None, frozen=False):
        _check_allowed('aggregation', kind, ALLOWED_AGGREGATION)
        required = {
            'regular': ['weight'],
            'depthwise': ['depth'],
            'depthwise-separable': ['depth', 'point'],
        }[kind]
        missing = list(set(required) - set(weights))
        if missing:
            missing_fmt = ', '.join([f'"{i}"' for i in missing])
            raise ConvNNConfigError(f'Missing aggregation weights for kind {kind!r}: '
                                    f'{missing_fmt}.')
        self._kind = kind
        self._weights = {i: weights[i] for i in required}
        self._bias = bias
        self._frozen = bool(frozen)
        if frozen:
            for i in self.parameters():
                if isinstance(i, Parameter):
                    i.freeze()

    def __repr__(self):
        return (f'{self.__class__.__name__}(kind={self.kind!r}, kernel={self.kernel}, '
                f'bias={self.bias is not None!r}, frozen={self.frozen!r})')

    @property
    def kind(self):
        return self._kind

    @property
    def weights(self):
        return self._weights

    @property
    def bias(self):
        return self._bias

    @property
    def frozen(self):
        return self._frozen

    @property
    def kernel(self):
        w = self._weights.get('weight', self._weights.get('depth'))
        return w.shape[-1]

    @property
    def in_channels(self):
        if self.kind == 'regular':
            return self._weights['weight'].shape[1]
        return self._weights['depth'].shape[0]

    @property
    def out_channels(self):
        if self.kind == 'regular':
            return self._weights['weight'].shape[0]
        if self.kind == 'depthwise':
            return self._weights['depth'].shape[0]
        return self._weights['point'].shape[1]

    def parameters(self):
        params = list(self._weights.values())
        if self._bias is not None:
            params.append(self._bias)
        return params

    @classmethod
    def init(cls, kind, channels, out_channels, k, rng, bias=True, prefix=''):
        """Random aggregation weights, uniform in ±1/√fan_in; bias starts at zero."""

        _check_allowed('aggregation', kind, ALLOWED_AGGREGATION)
        if kind == 'depthwise' and out_channels != channels:
            raise ConvNNConfigError(f'Depthwise aggregation keeps the channel count: '
                                    f'out_channels={out_channels} but the value width is '
                                    f'{channels}.')
        weights = {}
        if kind == 'regular':
            bound = 1 / math.sqrt(channels * k)
            weights['weight'] = Parameter(rng.uniform(-bound, bound,
                                                      (out_channels, channels, k)),
                                          name=prefix + 'weight')
        else:
            bound = 1 / math.sqrt(k)
            weights['depth'] = Parameter(rng.uniform(-bound, bound, (channels, k)),
                                         name=prefix + 'depth')
            if kind == 'depthwise-separable':
                bound = 1 / math.sqrt(channels)
                weights['point'] = Parameter(rng.uniform(-bound, bound,
                                                         (channels, out_channels)),
                                             name=prefix + 'point')
        bias_param = Parameter(np.zeros(out_channels), name=prefix + 'bias') if bias else None

        return cls(kind, weights, bias=bias_param)

    @classmethod
    def unit(cls, channels, k, frozen=True, prefix=''):
        """Depthwise all-ones weights without bias: a plain sum over each k-window."""
        depth = Parameter(np.ones((channels, k)), name=prefix + 'depth')
        return cls('depthwise', {'depth': depth}, bias=None, frozen=frozen)


def conv1d(x, params, kind=None, kernel=None, stride=None):
    """Aggregate a channel-first sequence with a strided 1D convolution.

    Parameters
    ----------
    x : Tensor of shape [..., c, L]
    params : AggregationParams
    kind : str, optional
        Defaults to `params.kind`; must agree with it.
    kernel : int, optional
        Defaults to the kernel extent of `params`; must agree with it.
    stride : int, optional
        Defaults to `kernel`.

    Returns
    -------
    Tensor of shape [..., c', (L - kernel) // stride + 1]

    """

    x = as_tensor(x)
    kind = kind or params.kind
    if kind != params.kind:
        raise ConvNNConfigError(f'Aggregation kind {kind!r} does not match parameters of '
                                f'kind {params.kind!r}.')
    kernel = kernel or params.kernel
    if kernel != params.kernel:
        raise ConvNNConfigError(f'Kernel extent {kernel} does not match the aggregation '
                                f'weights, which have extent {params.kernel}.')
    stride = stride or kernel
    if stride < 1:
        raise ConvNNConfigError(f'`stride` must be positive, not {stride}.')

    if kind == 'regular':
        out = Conv1dRegular.apply(x, params.weights['weight'], stride=stride)
    else:
        out = Conv1dDepthwise.apply(x, params.weights['depth'], stride=stride)
        if kind == 'depthwise-separable':
            out = swap_last(matmul(swap_last(out), params.weights['point']))

    if params.bias is not None:
        out = out + params.bias.reshape(-1, 1)

    return out


def modulate(values, weights, rho):
    """Scale gathered neighbour rows by ρ of their similarities.

    Parameters
    ----------
    values : Tensor of shape [..., n, k, c]
    weights : Tensor of shape [..., n, k]
    rho : str
        "ones" leaves `values` unchanged; "softmax" scales `values[..., i, j, :]` by
        `softmax(weights[..., i, :])[j]`.

    """

    _check_allowed('rho', rho, ALLOWED_RHO)
    if tuple(values.shape[:-1]) != tuple(weights.shape):
        raise DimensionError(f'Gathered values {list(values.shape)} and weights '
                             f'{list(weights.shape)} do not agree.')
    if rho == 'ones':
        return values
    scale = softmax_rows(weights)
    return values * scale.reshape(tuple(weights.shape) + (1,))


def resolve_candidates(cfg, n, grid=None, rng=None):
    """Get the candidate set of one forward pass.

    Random candidates use the fixed seed of `cfg.seed_policy` if given; otherwise a seed
    drawn from `rng` (training) or `EVAL_SEED` when `rng` is None (evaluation).

    """

    if cfg.strategy == 'all':
        return candidates_all(n)
    if cfg.strategy == 'random':
        if cfg.seed_policy != 'per-pass':
            seed = cfg.seed_policy
        elif rng is not None:
            seed = int(rng.integers(0, 2 ** 63 - 1))
        else:
            seed = EVAL_SEED
        return candidates_random(n, cfg.r, seed)

    shape = grid if grid is not None else (n,)
    return candidates_spatial(shape, cfg.r)


def check_finite(x, name='input'):
    if not np.all(np.isfinite(x.data)):
        raise ValidationError(f'ConvNN {name} contains non-finite values.')


def convnn_forward(x, cfg, proj, agg, coords=None, rng=None, grid=None,
                   return_neighbors=False):
    """Apply the ConvNN operator to a set of feature rows.

    Parameters
    ----------
    x : Tensor of shape [..., n, c]
    cfg : ConvNNConfig
    proj : ProjectionParams
    agg : AggregationParams
        Kernel extent must equal `cfg.k`.
    coords : ndarray of shape [n, d], optional
        Coordinate channels for `cfg.positional`; by default generated for `grid`.
    rng : numpy.random.Generator, optional
        Run-level generator for per-pass random candidates.
    grid : tuple of int, optional
        (rows, cols) layout of the n rows, used by spatial candidates and coordinates.
        Rows are treated as a 1D sequence when omitted.
    return_neighbors : bool, optional
        If True, also return the `NeighborIndex` used.

    Returns
    -------
    Tensor of shape [..., n, out]

    """

    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f'ConvNN input must be [..., n, c], not {list(x.shape)}.')
    check_finite(x)
    if agg.kernel != cfg.k:
        raise ConvNNConfigError(f'Aggregation kernel extent {agg.kernel} differs from '
                                f'k={cfg.k}.')
    if agg.kind != cfg.aggregation:
        raise ConvNNConfigError(f'Aggregation parameters of kind {agg.kind!r} given for '
                                f'aggregation {cfg.aggregation!r}.')

    n = x.shape[-2]
    qk_src = v_src = x
    if cfg.positional != 'none':
        if coords is None:
            coords = positional_coordinates(grid if grid is not None else n)
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[0] != n:
            raise DimensionError(f'{coords.shape[0]} coordinate rows given for {n} '
                                 f'features.')
        lead = x.shape[:-2]
        x_pos = concat([x, Tensor(np.broadcast_to(coords, lead + coords.shape))], axis=-1)
        qk_src = x_pos
        if cfg.positional == 'similarity-and-values':
            v_src = x_pos

    q = ProjectionParams.apply(qk_src, proj.wq)
    k = ProjectionParams.apply(qk_src, proj.wk)
    v = ProjectionParams.apply(v_src, proj.wv)

    candidates = resolve_candidates(cfg, n, grid=grid, rng=rng)
    if cfg.strategy == 'all':
        sim = similarity(q, k, normalize=cfg.normalize, metric=cfg.metric)
    else:
        sim = similarity(q, take_rows(k, candidates.indices), normalize=cfg.normalize,
                         metric=cfg.metric, columns=candidates.indices)
    neighbors = knn(sim, cfg.k, candidates)

    gathered = gather_rows(v, neighbors.indices)
    modulated = modulate(gathered, neighbors.weights, cfg.rho)

    # [..., n, k, v] -> [..., v, n·k], rows ordered by feature then neighbour rank
    nd = modulated.ndim
    axes = list(range(nd - 3)) + [nd - 1, nd - 3, nd - 2]
    width = modulated.shape[-1]
    stacked = modulated.transpose(axes).reshape(modulated.shape[:-3] + (width, n * cfg.k))

    out = swap_last(conv1d(stacked, agg, kernel=cfg.k, stride=cfg.k))

    if return_neighbors:
        return out, neighbors
    return out


def convnn_forward_2d(x, cfg, proj, agg, rng=None, return_neighbors=False):
    """Apply the ConvNN operator to a channel-first image.

    The (optionally pixel-unshuffled) grid is flattened row-major to tokens, so the
    token of (row, col) has index `row·cols + col`.

    Parameters
    ----------
    x : Tensor of shape [..., c, rows, cols]

    Returns
    -------
    Tensor of shape [..., out, rows / p, cols / p]

    """

    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f'2D ConvNN input must be [..., c, rows, cols], not '
                             f'{list(x.shape)}.')
    if cfg.patch > 1:
        x = pixel_unshuffle(x, cfg.patch)

    lead = x.shape[:-3]
    c, rows, cols = x.shape[-3:]
    tokens = swap_last(x.reshape(lead + (c, rows * cols)))
    out = convnn_forward(tokens, cfg, proj, agg, rng=rng, grid=(rows, cols),
                         return_neighbors=return_neighbors)
    if return_neighbors:
        out, neighbors = out
    out = swap_last(out)
    out = out.reshape(lead + (out.shape[-2], rows, cols))

    if return_neighbors:
        return out, neighbors
    return out


class AttentionDescriptor(object):
    """Attention-variant token mixer, described for FLOP accounting."""

    __slots__ = ['_kind', '_k', '_window', '_stride', '_normalize']

    def __init__(self, kind='attention', k=None, window=None, stride=None, normalize=False):
        _check_allowed('kind', kind, ALLOWED_ATTENTION)
        if kind == 'kvt' and not k:
            raise ConvNNConfigError('KVT attention requires `k`.')
        if kind in ('local', 'sparse') and not window:
            raise ConvNNConfigError(f'{kind} attention requires `window`.')
        if kind == 'sparse' and not stride:
            raise ConvNNConfigError('Sparse attention requires `stride`.')
        self._kind = kind
        self._k = k
        self._window = window
        self._stride = stride
        self._normalize = normalize

    def __repr__(self):
        return (f'{self.__class__.__name__}(kind={self.kind!r}, k={self.k!r}, '
                f'window={self.window!r}, stride={self.stride!r})')

    @property
    def kind(self):
        return self._kind

    @property
    def k(self):
        return self._k

    @property
    def window(self):
        return self._window

    @property
    def stride(self):
        return self._stride

    @property
    def normalize(self):
        return self._normalize

    def keys_per_query(self, n):
        if self.kind == 'attention':
            return n
        if self.kind == 'kvt':
            return n
        if self.kind == 'local':
            return min(self.window, n)
        return min(self.window + math.ceil(n / self.stride), n)


def _topk_cost(n, m, k):
    """Heap-based selection: one comparison per candidate times the heap depth."""
    return n * m * max(1, math.ceil(math.log2(k + 1)))


def flop_breakdown(desc, n, c, learned_projections=True, grid=None):
    """Per-term FLOP counts of one mixer application on `n` tokens of width `c`.

    Multiply-adds count as 2 FLOPs. Projection and value widths equal `c` (plus any
    coordinate channels); the output projection common to all mixers is excluded.

    Terms
    -----
    projection
        2·n·c_qk·h (queries) + 2·m·c_qk·h (keys) + 2·m·c·v (values), where m is the
        number of candidate keys. Zero for identity projections.
    normalization
        3·(n + m)·h when rows are ℓ2-normalised.
    similarity
        2·n·m·h.
    topk
        n·m·⌈log2(k + 1)⌉.
    modulation
        Softmax over the selected entries (3 per entry) plus scaling (1 per value).
    aggregation
        ConvNN only: 2·n·k·v (depthwise), 2·n·k·v·out (regular), or
        2·n·k·v + 2·n·v·out (depthwise-separable), plus n·out for the bias.
    attention_values
        Attention variants only: 2·n·s·v for s attended keys per query.

    Returns
    -------
    dict of str to float

    """

    terms = dict.fromkeys(['projection', 'normalization', 'similarity', 'topk',
                           'modulation', 'aggregation', 'attention_values'], 0.0)

    if isinstance(desc, ConvNNConfig):
        ndim = 1 if grid is None else 2
        c_qk = c + desc.positional_width(ndim)
        c_v = c_qk if desc.positional == 'similarity-and-values' else c
        h = c_qk if not learned_projections else c
        v = c_v if not learned_projections else c
        out = desc.out_channels or v
        if desc.strategy == 'all':
            m = n
        elif desc.strategy == 'random':
            m = min(desc.r, n)
        else:
            m = len(candidates_spatial(grid if grid is not None else n, desc.r).indices)
        if learned_projections:
            terms['projection'] = 2.0 * (n * c_qk * h + m * c_qk * h + m * c_v * v)
        if desc.normalize:
            terms['normalization'] = 3.0 * (n + m) * h
        terms['similarity'] = 2.0 * n * m * h
        terms['topk'] = float(_topk_cost(n, m, desc.k))
        if desc.rho == 'softmax':
            terms['modulation'] = 3.0 * n * desc.k + 1.0 * n * desc.k * v
        k = desc.k
        if desc.aggregation == 'depthwise':
            agg = 2.0 * n * k * v
        elif desc.aggregation == 'regular':
            agg = 2.0 * n * k * v * out
        else:
            agg = 2.0 * n * k * v + 2.0 * n * v * out
        if desc.bias:
            agg += n * out
        terms['aggregation'] = agg
        return terms

    if not isinstance(desc, AttentionDescriptor):
        raise TypeError(f'Cannot estimate FLOPs of {desc!r}.')

    h = v = c
    m = desc.keys_per_query(n)
    if learned_projections:
        terms['projection'] = 2.0 * 3 * n * c * c
    if desc.normalize:
        terms['normalization'] = 3.0 * 2 * n * h
    terms['similarity'] = 2.0 * n * m * h
    attended = m
    if desc.kind == 'kvt':
        terms['topk'] = float(_topk_cost(n, m, desc.k))
        attended = min(desc.k, n)
    terms['modulation'] = 3.0 * n * attended
    terms['attention_values'] = 2.0 * n * attended * v

    return terms


def flop_estimate(desc, n, c, learned_projections=True, grid=None):
    """Total FLOPs of one mixer application; the sum of `flop_breakdown`."""
    return float(sum(flop_breakdown(desc, n, c, learned_projections, grid).values()))
