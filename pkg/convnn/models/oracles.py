"""`convnn.models.oracles.py`

Straight-line, loop-based reference implementations of attention, KVT attention,
direct convolution and brute-force k-NN. None of these record on a tape or reuse the
selection and aggregation code of the ConvNN operator. The `check_*` functions compare
the operator against them.

"""

import json
import math

import numpy as np

from convnn.errors import ConvNNConfigError, DimensionError
from convnn.models.operator import (
    AggregationParams,
    ConvNNConfig,
    ProjectionParams,
    convnn_forward,
)
from convnn.models.tensor import Parameter, Tensor


class EquivalenceReport(object):
    """Outcome of comparing the operator against a reference implementation."""

    __slots__ = ['_case', '_deviation', '_tolerance', '_config', '_details']

    def __init__(self, case, deviation, tolerance, config=None, details=None):
        self._case = case
        self._deviation = float(deviation)
        self._tolerance = float(tolerance)
        self._config = config or {}
        self._details = details or {}

    def __repr__(self):
        return (f'{self.__class__.__name__}(case={self.case!r}, '
                f'deviation={self.deviation:.3e}, passed={self.passed!r})')

    @property
    def case(self):
        return self._case

    @property
    def deviation(self):
        return self._deviation

    @property
    def tolerance(self):
        return self._tolerance

    @property
    def passed(self):
        return self._deviation <= self._tolerance

    @property
    def config(self):
        return self._config

    @property
    def details(self):
        return self._details

    def as_dict(self):
        return {
            'case': self.case,
            'deviation': self.deviation,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'config': dict(self.config),
            'details': dict(self.details),
        }

    def to_json(self):
        return json.dumps(self.as_dict())


def _array(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _dot(a, b):
    total = 0.0
    for i in range(len(a)):
        total += a[i] * b[i]
    return total


def _normalized(rows, eps=1e-12):
    out = []
    for row in rows:
        norm = math.sqrt(_dot(row, row))
        denom = norm if norm >= eps else eps
        out.append([i / denom for i in row])
    return out


def _softmax(values):
    top = max(values)
    exps = [math.exp(i - top) for i in values]
    total = sum(exps)
    return [i / total for i in exps]


def _check_qkv(q, k, v):
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError('Reference attention expects 2D query, key and value '
                             'matrices.')
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f'Incompatible shapes: queries {list(q.shape)}, keys '
                             f'{list(k.shape)}, values {list(v.shape)}.')


def _scores(q, k, normalize):
    if normalize:
        q, k = _normalized(q), _normalized(k)
    return [[_dot(q_i, k_j) for k_j in k] for q_i in q]


def attention_naive(q, k, v, normalize=False):
    """softmax(QKᵀ)V by explicit row loops, without 1/√h scaling. With `normalize`,
    rows of Q and K are ℓ2-normalised first (cosine attention)."""

    q, k, v = _array(q), _array(k), _array(v)
    _check_qkv(q, k, v)
    scores = _scores(q, k, normalize)
    out = np.zeros((q.shape[0], v.shape[1]))
    for i, row in enumerate(scores):
        probs = _softmax(row)
        for j, p in enumerate(probs):
            for col in range(v.shape[1]):
                out[i, col] += p * v[j, col]
    return out


def kvt_attention_naive(q, k, v, kk, normalize=False):
    """Attention where each query keeps only its `kk` highest-scoring keys (ties to
    the lowest key index) before the softmax."""

    q, k, v = _array(q), _array(k), _array(v)
    _check_qkv(q, k, v)
    if kk < 1 or kk > k.shape[0]:
        raise ConvNNConfigError(f'KVT top-k of {kk} is out of range for {k.shape[0]} '
                                f'keys.')
    scores = _scores(q, k, normalize)
    out = np.zeros((q.shape[0], v.shape[1]))
    for i, row in enumerate(scores):
        ranked = sorted(range(len(row)), key=lambda j: (-row[j], j))[:kk]
        probs = _softmax([row[j] for j in ranked])
        for j, p in zip(ranked, probs):
            for col in range(v.shape[1]):
                out[i, col] += p * v[j, col]
    return out


def conv2d_naive(x, kernels, bias=None, padding='none'):
    """Direct 2D cross-correlation (kernels are not flipped).

    Parameters
    ----------
    x : array of shape [c, rows, cols]
    kernels : array of shape [out, c, kh, kw]
    bias : array of shape [out], optional
    padding : str
        "none", or "zero-same" to pad by half the kernel extent with zeros.

    """

    x, kernels = _array(x), _array(kernels)
    if padding not in ('none', 'zero-same'):
        raise ValueError(f'Padding {padding!r} not known. Allowed values are: '
                         f"'none', 'zero-same'.")
    if x.ndim != 3 or kernels.ndim != 4 or kernels.shape[1] != x.shape[0]:
        raise DimensionError(f'Input {list(x.shape)} and kernels {list(kernels.shape)} '
                             f'are not compatible.')

    c, rows, cols = x.shape
    n_out, _, kh, kw = kernels.shape
    pad_r = kh // 2 if padding == 'zero-same' else 0
    pad_c = kw // 2 if padding == 'zero-same' else 0
    out_rows = rows + 2 * pad_r - kh + 1
    out_cols = cols + 2 * pad_c - kw + 1
    if out_rows < 1 or out_cols < 1:
        raise DimensionError(f'Kernel {kh}×{kw} does not fit input {list(x.shape)}.')

    out = np.zeros((n_out, out_rows, out_cols))
    for o in range(n_out):
        for i in range(out_rows):
            for j in range(out_cols):
                total = 0.0 if bias is None else float(bias[o])
                for ch in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            r, s = i + a - pad_r, j + b - pad_c
                            if 0 <= r < rows and 0 <= s < cols:
                                total += kernels[o, ch, a, b] * x[ch, r, s]
                out[o, i, j] = total
    return out


def knn_bruteforce(x, k):
    """Indices of the `k` nearest rows to every row by squared Euclidean distance of
    ℓ2-normalised rows, nearest first, ties to the lowest index."""

    x = _array(x)
    if k < 1 or k > x.shape[0]:
        raise ConvNNConfigError(f'Cannot select k={k} neighbours from {x.shape[0]} rows.')
    rows = _normalized(x)
    out = np.zeros((len(rows), k), dtype=np.int64)
    for i, row_i in enumerate(rows):
        dists = []
        for j, row_j in enumerate(rows):
            dists.append(sum((a - b) ** 2 for a, b in zip(row_i, row_j)))
        out[i] = sorted(range(len(rows)), key=lambda j: (dists[j], j))[:k]
    return out


def _window(row, col, rows, cols):
    """Flat indices of the 3×3 window around (row, col), clipped to the grid."""
    return {(row + a) * cols + (col + b) for a in (-1, 0, 1) for b in (-1, 0, 1)
            if 0 <= row + a < rows and 0 <= col + b < cols}


def check_conv_reduction(grid, k=9, channels=3, seed=0):
    """Check that positional-only similarity recovers a 3×3 convolution.

    Coordinates are appended to random features; the query/key projections keep only
    the coordinate channels (rescaled to integer grid units) and score by negated
    squared distance. Every interior position must select exactly its 3×3 window, and
    an all-ones depthwise aggregation must equal a padding-free all-ones convolution
    there.

    Parameters
    ----------
    grid : tuple of int
        (rows, cols), each at least 5.
    k : int
        Must be 9.

    Returns
    -------
    EquivalenceReport

    """

    rows, cols = grid
    if k != 9:
        raise ConvNNConfigError(f'The convolution reduction is defined for k=9, not {k}.')
    if rows < 5 or cols < 5:
        raise DimensionError(f'The convolution reduction needs a grid of at least 5×5, '
                             f'not {rows}×{cols}.')

    rng = np.random.default_rng(seed)
    n = rows * cols
    x = rng.normal(size=(n, channels))

    mask = np.zeros((channels + 2, 2))
    mask[channels, 0] = cols - 1
    mask[channels + 1, 1] = rows - 1
    proj = ProjectionParams(Parameter(mask, name='wq', frozen=True),
                            Parameter(mask.copy(), name='wk', frozen=True), None)
    cfg = ConvNNConfig(k=9, rho='ones', normalize=False, metric='euclidean',
                       strategy='all', positional='similarity-only',
                       aggregation='depthwise', bias=False)
    agg = AggregationParams.unit(channels, 9)

    out, neighbors = convnn_forward(Tensor(x), cfg, proj, agg, grid=(rows, cols),
                                    return_neighbors=True)

    interior_mismatch = 0
    boundary_mismatch = 0
    boundary_positions = 0
    for row in range(rows):
        for col in range(cols):
            selected = set(neighbors.indices[row * cols + col].tolist())
            mismatch = selected != _window(row, col, rows, cols)
            if 0 < row < rows - 1 and 0 < col < cols - 1:
                interior_mismatch += mismatch
            else:
                boundary_positions += 1
                boundary_mismatch += mismatch

    image = x.T.reshape(channels, rows, cols)
    kernels = np.zeros((channels, channels, 3, 3))
    for ch in range(channels):
        kernels[ch, ch] = 1.0
    expected = conv2d_naive(image, kernels, padding='none')
    actual = out.data.T.reshape(channels, rows, cols)[:, 1:-1, 1:-1]
    deviation = float(np.max(np.abs(actual - expected)))
    if interior_mismatch:
        deviation = math.inf

    return EquivalenceReport(
        case=f'conv-reduction-{rows}x{cols}',
        deviation=deviation,
        tolerance=1e-12,
        config={'rows': rows, 'cols': cols, 'k': k, 'channels': channels, 'seed': seed},
        details={
            'interior_positions': (rows - 2) * (cols - 2),
            'interior_mismatches': interior_mismatch,
            'boundary_positions': boundary_positions,
            'boundary_mismatches_out_of_claim': boundary_mismatch,
        },
    )


def check_attention_reduction(n, c, h, v, kk, seed, perturbation=0.0):
    """Check that ConvNN with softmax modulation and frozen unit depthwise aggregation
    equals cosine KVT attention (and full cosine attention when `kk == n`).

    `perturbation` is added to the unit aggregation weights; it exists to confirm that
    the check detects a broken reduction.

    """

    if kk < 1 or kk > n:
        raise ConvNNConfigError(f'KVT top-k of {kk} is out of range for n={n}.')

    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, c))
    proj = ProjectionParams.init(c, h, v, rng)
    cfg = ConvNNConfig(k=kk, rho='softmax', normalize=True, metric='dot',
                       strategy='all', aggregation='depthwise', bias=False)
    agg = AggregationParams.unit(v, kk)
    if perturbation:
        agg.weights['depth'].assign(np.ones((v, kk)) + perturbation)

    actual = convnn_forward(Tensor(x), cfg, proj, agg).data

    q = x @ proj.wq.data
    k = x @ proj.wk.data
    values = x @ proj.wv.data
    details = {}
    details['kvt'] = float(np.max(np.abs(actual - kvt_attention_naive(
        q, k, values, kk, normalize=True))))
    if kk == n:
        details['attention'] = float(np.max(np.abs(actual - attention_naive(
            q, k, values, normalize=True))))

    return EquivalenceReport(
        case=f'attention-reduction-n{n}-k{kk}',
        deviation=max(details.values()),
        tolerance=1e-10,
        config={'n': n, 'c': c, 'h': h, 'v': v, 'k': kk, 'seed': seed},
        details=details,
    )
