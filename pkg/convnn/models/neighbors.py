"""`convnn.models.neighbors.py`

Similarity computation, top-k selection, candidate subsampling and positional
coordinate channels: everything that decides which neighbours a feature can see.

"""

import math
import warnings

import numpy as np

from convnn.errors import CandidateError, ConvNNConfigError, DimensionError
from convnn.models.tensor import (
    Tensor,
    as_tensor,
    concat,
    l2_normalize_rows,
    matmul,
    swap_last,
    take_along_last,
)

ALLOWED_METRICS = ['dot', 'euclidean']
ALLOWED_STRATEGIES = ['all', 'random', 'spatial']


class SimilarityMatrix(object):
    """Pairwise similarities between query rows and key rows.

    Attributes
    ----------
    values : Tensor
        Similarities of shape [..., n, m]; larger means closer.
    columns : ndarray of int
        Key index of each of the m columns. Usually `arange(m)`, but the operator only
        scores candidate keys, in which case this holds the candidate indices.
    normalized : bool
    metric : str

    """

    __slots__ = ['_values', '_columns', '_normalized', '_metric']

    def __init__(self, values, columns=None, normalized=True, metric='dot'):
        self._values = as_tensor(values)
        m = self._values.shape[-1]
        if columns is None:
            columns = np.arange(m)
        columns = np.asarray(columns, dtype=np.int64)
        if columns.shape != (m,):
            raise DimensionError(f'Similarity matrix has {m} columns but {columns.size} '
                                 f'column indices were given.')
        self._columns = columns
        self._normalized = normalized
        self._metric = metric

    def __repr__(self):
        return (f'{self.__class__.__name__}(shape={list(self.values.shape)!r}, '
                f'normalized={self.normalized!r}, metric={self.metric!r})')

    @property
    def values(self):
        return self._values

    @property
    def columns(self):
        return self._columns

    @property
    def normalized(self):
        return self._normalized

    @property
    def metric(self):
        return self._metric


class NeighborIndex(object):
    """The k selected neighbours of every query row, in descending similarity.

    Attributes
    ----------
    indices : ndarray of int, shape [..., n, k]
    weights : Tensor, shape [..., n, k]
        The similarity values of the selected neighbours.

    """

    __slots__ = ['_indices', '_weights']

    def __init__(self, indices, weights):
        self._indices = indices
        self._weights = weights

    def __repr__(self):
        return f'{self.__class__.__name__}(shape={list(self.indices.shape)!r})'

    @property
    def indices(self):
        return self._indices

    @property
    def weights(self):
        return self._weights

    @property
    def k(self):
        return self._indices.shape[-1]


class CandidateSet(object):
    """The key/value rows eligible for selection."""

    __slots__ = ['_strategy', '_r', '_seed', '_indices', '_n']

    def __init__(self, strategy, indices, n, r=None, seed=None):
        if strategy not in ALLOWED_STRATEGIES:
            allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_STRATEGIES])
            raise ConvNNConfigError(f'Candidate strategy {strategy!r} not known. Allowed '
                                    f'strategies are: {allowed_fmt}.')
        self._strategy = strategy
        self._indices = np.asarray(indices, dtype=np.int64)
        self._n = n
        self._r = r if r is not None else len(self._indices)
        self._seed = seed

    def __repr__(self):
        return (f'{self.__class__.__name__}(strategy={self.strategy!r}, r={self.r!r}, '
                f'size={len(self)}, n={self.n})')

    def __len__(self):
        return len(self._indices)

    @property
    def strategy(self):
        return self._strategy

    @property
    def r(self):
        return self._r

    @property
    def seed(self):
        return self._seed

    @property
    def indices(self):
        return self._indices

    @property
    def n(self):
        return self._n

    def as_dict(self):
        return {
            'strategy': self.strategy,
            'r': self.r,
            'seed': self.seed,
            'indices': self.indices.tolist(),
            'n': self.n,
        }


def similarity(q, kmat, normalize=True, metric='dot', columns=None, eps=1e-12):
    """Score every query row against every key row.

    Parameters
    ----------
    q : Tensor of shape [..., n, h]
    kmat : Tensor of shape [..., m, h]
    normalize : bool, optional
        If True, rows of `q` and `kmat` are scaled to unit norm first, making "dot"
        the cosine similarity. No 1/√h scaling is applied in either case.
    metric : str, optional
        "dot" for inner products or "euclidean" for negated squared distances.
    columns : array_like of int, optional
        Key index of each row of `kmat`, if `kmat` holds a subset of the keys.

    Returns
    -------
    SimilarityMatrix

    """

    q = as_tensor(q)
    kmat = as_tensor(kmat)
    if q.shape[-1] != kmat.shape[-1]:
        raise DimensionError(f'Query rows {list(q.shape)} and key rows '
                             f'{list(kmat.shape)} must have the same width.')
    if metric not in ALLOWED_METRICS:
        allowed_fmt = ', '.join([f'{i!r}' for i in ALLOWED_METRICS])
        raise ConvNNConfigError(f'Similarity metric {metric!r} not known. Allowed metrics '
                                f'are: {allowed_fmt}.')

    if normalize:
        q = l2_normalize_rows(q, eps=eps)
        kmat = l2_normalize_rows(kmat, eps=eps)

    dots = matmul(q, swap_last(kmat))
    if metric == 'dot':
        values = dots
    else:
        q_sq = (q * q).sum(axis=-1, keepdims=True)
        k_sq = swap_last((kmat * kmat).sum(axis=-1, keepdims=True))
        values = dots * 2.0 - q_sq - k_sq

    return SimilarityMatrix(values, columns=columns, normalized=normalize, metric=metric)


def _candidate_positions(sim, candidates):
    columns = sim.columns
    if candidates is None or candidates.strategy == 'all':
        return np.arange(len(columns))
    if np.array_equal(columns, candidates.indices):
        return np.arange(len(columns))
    positions = np.searchsorted(columns, candidates.indices)
    positions = np.clip(positions, 0, len(columns) - 1)
    if not np.array_equal(columns[positions], candidates.indices):
        raise ConvNNConfigError('Candidate indices are not all columns of the similarity '
                                'matrix.')
    return positions


def knn(sim, k, candidates=None):
    """Select, for every query row, the `k` candidate columns of largest similarity.

    Neighbours are ordered by descending similarity; equal similarities are ordered by
    lowest key index. The selected indices are constants on the tape; gradients flow
    only through `weights`.

    Parameters
    ----------
    sim : SimilarityMatrix
    k : int
    candidates : CandidateSet, optional
        If omitted, all columns are candidates.

    Returns
    -------
    NeighborIndex

    """

    positions = _candidate_positions(sim, candidates)
    if k < 1 or k > len(positions):
        raise ConvNNConfigError(f'Cannot select k={k} neighbours from {len(positions)} '
                                f'candidates.')

    values = sim.values.data[..., positions]
    order = np.argsort(-values, axis=-1, kind='stable')[..., :k]
    column_pos = positions[order]
    indices = sim.columns[column_pos]
    weights = take_along_last(sim.values, column_pos)

    return NeighborIndex(indices, weights)


def candidates_all(n):
    return CandidateSet('all', np.arange(n), n)


def candidates_random(n, r, seed):
    """Draw `r` distinct key indices uniformly without replacement.

    The same `(n, r, seed)` always gives the same set. `r > n` is clamped to `n` with a
    warning.

    """

    if r < 1:
        raise CandidateError(f'Number of random candidates must be positive, not {r}.')
    if r > n:
        warnings.warn(f'Number of random candidates r={r} exceeds the {n} available; '
                      f'using r={n}.')
        r = n
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=r, replace=False))

    return CandidateSet('random', indices, n, r=r, seed=seed)


def _parse_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    shape = tuple(int(i) for i in shape)
    if len(shape) not in (1, 2) or min(shape) < 1:
        raise DimensionError(f'Spatial shape must be a positive length or a positive '
                             f'(rows, cols) pair, not {shape!r}.')
    return shape


def candidates_spatial(shape, r):
    """Select keys on a regular sub-grid.

    In 1D, every `r`-th position is selected. On a (rows, cols) grid, `r` must be a
    perfect square; every `√r`-th row and column is selected, giving flat indices
    `(√r·i)·cols + √r·j`.

    """

    shape = _parse_shape(shape)
    if r < 1:
        raise CandidateError(f'Spatial candidate stride must be positive, not {r}.')

    if len(shape) == 1:
        indices = np.arange(0, shape[0], r)
        return CandidateSet('spatial', indices, shape[0], r=r)

    rows, cols = shape
    step = math.isqrt(r)
    if step * step != r:
        raise CandidateError(f'Spatial candidates on a 2D grid require a square r, but '
                             f'r={r}.')
    row_idx = np.arange(0, rows, step)
    col_idx = np.arange(0, cols, step)
    indices = (row_idx[:, None] * cols + col_idx[None, :]).reshape(-1)

    return CandidateSet('spatial', indices, rows * cols, r=r)


def positional_coordinates(shape):
    """Coordinates in [0, 1] of every position, in row-major flat order.

    Returns
    -------
    ndarray of shape [n, 1] (1D) or [n, 2] (2D; column coordinate first)

    """

    shape = _parse_shape(shape)

    def ramp(length):
        return np.zeros(1) if length == 1 else np.arange(length) / (length - 1)

    if len(shape) == 1:
        return ramp(shape[0])[:, None]

    rows, cols = shape
    col_coord = np.tile(ramp(cols), rows)
    row_coord = np.repeat(ramp(rows), cols)
    return np.stack([col_coord, row_coord], axis=-1)


def append_positional(x, shape):
    """Concatenate coordinate channels to a channel-first tensor.

    Parameters
    ----------
    x : Tensor of shape [..., c, L] or [..., c, rows, cols]
    shape : int or tuple of int
        The spatial shape, `L` or `(rows, cols)`.

    Returns
    -------
    Tensor of shape [..., c + 1, L] or [..., c + 2, rows, cols]

    """

    x = as_tensor(x)
    shape = _parse_shape(shape)
    if tuple(x.shape[-len(shape):]) != shape or x.ndim < len(shape) + 1:
        raise DimensionError(f'Spatial extents of {list(x.shape)} do not match '
                             f'{list(shape)}.')
    coords = positional_coordinates(shape).T.reshape((-1,) + shape)
    lead = x.shape[:x.ndim - len(shape) - 1]
    coords = np.broadcast_to(coords, lead + coords.shape)
    return concat([x, Tensor(coords)], axis=x.ndim - len(shape) - 1)
