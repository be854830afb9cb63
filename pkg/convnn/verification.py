"""`convnn.verification.py`

Property suites run by `convnn verify`. Each property yields a `PropertyResult` with
the measured deviation and the tolerance it is held to.

"""

import itertools
import tempfile
from pathlib import Path

import numpy as np

from convnn.cnnt import (
    decode_cnnt,
    encode_cnnt,
    load_checkpoint,
    read_cnnt,
    save_checkpoint,
    write_cnnt,
)
from convnn.errors import AutodiffError, DatasetFormatError, VerificationError
from convnn.models.datasets import CIFAR_PIXELS, gen_synthetic, read_cifar_records
from convnn.models.gradcheck import check_gradients
from convnn.models.layers import Attention, Branching, ConvNNMixer
from convnn.models.neighbors import candidates_random, candidates_spatial, knn, similarity
from convnn.models.operator import (
    AggregationParams,
    AttentionDescriptor,
    ConvNNConfig,
    ProjectionParams,
    convnn_forward,
    flop_breakdown,
    flop_estimate,
    resolve_candidates,
)
from convnn.models.oracles import (
    check_attention_reduction,
    check_conv_reduction,
    knn_bruteforce,
)
from convnn.models.tensor import (
    Tape,
    Tensor,
    conv2d,
    gather_rows,
    gelu,
    l2_normalize_rows,
    matmul,
    max_pool_2x2,
    pixel_shuffle,
    pixel_unshuffle,
    softmax_rows,
)
from convnn.models.training import METRICS_HEADER, RunMetrics
from convnn.models.zoo import LayerKind, MixerKind, mini_vgg, mini_vit

SUITES = ['tensor', 'neighbors', 'operator', 'equivalence', 'zoo', 'io']

GRAD_TOLERANCE = 1e-5
SIMILARITY_GAP = 1e-3


class PropertyResult(object):

    __slots__ = ['_suite', '_name', '_deviation', '_tolerance', '_message']

    def __init__(self, suite, name, deviation, tolerance, message=None):
        self._suite = suite
        self._name = name
        self._deviation = float(deviation)
        self._tolerance = float(tolerance)
        self._message = message

    def __repr__(self):
        return (f'{self.__class__.__name__}(name={self.full_name!r}, '
                f'passed={self.passed!r})')

    @property
    def suite(self):
        return self._suite

    @property
    def name(self):
        return self._name

    @property
    def full_name(self):
        return f'{self.suite}.{self.name}'

    @property
    def deviation(self):
        return self._deviation

    @property
    def tolerance(self):
        return self._tolerance

    @property
    def message(self):
        return self._message

    @property
    def passed(self):
        return self._deviation <= self._tolerance

    def format_line(self):
        status = 'PASS' if self.passed else 'FAIL'
        line = (f'{status}  {self.full_name}  deviation={self.deviation:.3e} '
                f'(tolerance {self.tolerance:.0e})')
        if self.message:
            line += f'  {self.message}'
        return line

    def as_dict(self):
        return {
            'suite': self.suite,
            'name': self.name,
            'deviation': self.deviation,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'message': self.message,
        }


def _raises(func, error):
    """0.0 if `func()` raises `error`, otherwise 1.0."""
    try:
        func()
    except error:
        return 0.0
    return 1.0


# --- tensor ------------------------------------------------------------------------

def suite_tensor(perturbation=0.0):

    rng = np.random.default_rng(0)

    x = rng.normal(scale=10.0, size=(50, 17))
    rows = softmax_rows(Tensor(x)).data.sum(axis=-1)
    yield 'softmax-rows-sum-to-one', np.max(np.abs(rows - 1.0)), 1e-12

    img = rng.normal(size=(2, 3, 8, 8))
    back = pixel_shuffle(pixel_unshuffle(Tensor(img), 2), 2).data
    yield 'pixel-unshuffle-round-trip', np.max(np.abs(back - img)), 0.0

    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3)))
    w_a = Tensor(rng.normal(size=(4, 5)))

    def dense_chain():
        return ((softmax_rows(matmul(a, b)) * w).sum() + (gelu(a) * a).mean() +
                (l2_normalize_rows(a) * w_a).sum())

    _, err = check_gradients(dense_chain, [a, b])
    yield 'gradients-dense-chain', err, GRAD_TOLERANCE

    v = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    idx = np.array([[0, 5], [2, 2], [5, 1], [3, 0]])
    w_g = Tensor(rng.normal(size=(4, 2, 3)))
    _, err = check_gradients(lambda: (gather_rows(v, idx) * w_g).sum(), [v])
    yield 'gradients-gather-rows', err, GRAD_TOLERANCE

    img = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
    kern = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    w_c = Tensor(rng.normal(size=(1, 3, 3, 3)))
    _, err = check_gradients(
        lambda: (max_pool_2x2(conv2d(img, kern, padding=1)) * w_c).sum(), [img, kern])
    yield 'gradients-conv2d-max-pool', err, GRAD_TOLERANCE

    def non_scalar_backward():
        t = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = t * 2.0
        tape.backward(out)

    yield 'backward-rejects-non-scalar', _raises(non_scalar_backward, AutodiffError), 0.0


# --- neighbors -----------------------------------------------------------------------

def suite_neighbors(perturbation=0.0):

    rng = np.random.default_rng(1)
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(2, 33))
        k = int(rng.integers(1, n + 1))
        x = rng.normal(size=(n, int(rng.integers(2, 6))))
        sim = similarity(Tensor(x), Tensor(x), normalize=True, metric='dot')
        mismatches += not np.array_equal(knn(sim, k).indices, knn_bruteforce(x, k))
    yield 'knn-matches-bruteforce', mismatches, 0.0

    mismatches = 0
    for _ in range(20):
        n = int(rng.integers(2, 33))
        k = int(rng.integers(1, n + 1))
        q, kmat = rng.normal(size=(2, n, 4))
        dot = knn(similarity(Tensor(q), Tensor(kmat), metric='dot'), k).indices
        euc = knn(similarity(Tensor(q), Tensor(kmat), metric='euclidean'), k).indices
        mismatches += not np.array_equal(dot, euc)
    yield 'euclidean-ranks-like-dot-when-normalized', mismatches, 0.0

    first = candidates_random(64, 16, 5).indices
    second = candidates_random(64, 16, 5).indices
    ok = (np.array_equal(first, second) and len(np.unique(first)) == 16 and
          np.all(np.diff(first) > 0) and first.min() >= 0 and first.max() < 64)
    yield 'random-candidates-reproducible', 0.0 if ok else 1.0, 0.0

    expected = np.array([(2 * i) * 8 + 2 * j for i in range(4) for j in range(4)])
    got = candidates_spatial((8, 8), 4).indices
    yield 'spatial-candidates-subgrid', 0.0 if np.array_equal(got, expected) else 1.0, 0.0


# --- operator ------------------------------------------------------------------------

def _agg_for(kind, v, k, rng, out=None):
    out = v if kind == 'depthwise' else (out or v + 1)
    return AggregationParams.init(kind, v, out, k, rng)


def _min_similarity_gap(x, cfg, proj, grid):
    """Smallest gap between consecutive ranked similarities among the top k + 1."""
    q = x @ proj.wq.data
    kmat = x @ proj.wk.data
    candidates = resolve_candidates(cfg, x.shape[0], grid=grid)
    sim = similarity(Tensor(q), Tensor(kmat[candidates.indices]), normalize=cfg.normalize,
                     metric=cfg.metric).values.data
    ranked = -np.sort(-sim, axis=-1)[:, :cfg.k + 1]
    return float(np.min(ranked[:, :-1] - ranked[:, 1:]))


def gradient_fixture(rho, strategy, aggregation, seed=0, n=16, c=3, k=3):
    """A full-chain ConvNN gradient fixture whose similarity gaps exceed
    `SIMILARITY_GAP`, so that finite differences do not change the selection."""

    grid = (4, 4)
    cfg = ConvNNConfig(k=k, rho=rho, strategy=strategy, r=8 if strategy == 'random' else 4,
                       seed_policy=11, aggregation=aggregation)
    for attempt in itertools.count(seed):
        rng = np.random.default_rng(attempt)
        x = rng.normal(size=(n, c))
        proj = ProjectionParams.init(c, c, c, rng)
        if _min_similarity_gap(x, cfg, proj, grid) > SIMILARITY_GAP:
            break
    agg = _agg_for(aggregation, c, k, rng)
    out_w = Tensor(rng.normal(size=(n, agg.out_channels)))
    x = Tensor(x, requires_grad=True)

    def func():
        return (convnn_forward(x, cfg, proj, agg, grid=grid) * out_w).sum()

    return func, [x] + proj.parameters() + agg.parameters()


def suite_operator(perturbation=0.0):

    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 17))
        c = int(rng.integers(3, 6))
        k = int(rng.integers(1, n + 1))
        kind = ['depthwise', 'regular', 'depthwise-separable'][int(rng.integers(0, 3))]
        rho = ['ones', 'softmax'][int(rng.integers(0, 2))]
        cfg = ConvNNConfig(k=k, rho=rho, aggregation=kind)
        proj = ProjectionParams.init(c, c, c, rng)
        agg = _agg_for(kind, c, k, rng)
        x = rng.normal(size=(n, c))
        perm = rng.permutation(n)
        permuted = convnn_forward(Tensor(x[perm]), cfg, proj, agg).data
        original = convnn_forward(Tensor(x), cfg, proj, agg).data[perm]
        worst = max(worst, float(np.max(np.abs(permuted - original))))
    yield 'permutation-equivariance', worst, 1e-12

    for rho, strategy, aggregation in itertools.product(
            ['ones', 'softmax'], ['all', 'random', 'spatial'],
            ['depthwise', 'regular', 'depthwise-separable']):
        func, tensors = gradient_fixture(rho, strategy, aggregation)
        _, err = check_gradients(func, tensors)
        yield f'gradients-{rho}-{strategy}-{aggregation}', err, GRAD_TOLERANCE

    n, c = 196, 192
    base = ConvNNConfig(k=9, rho='softmax', aggregation='depthwise', bias=False)
    random_flops = flop_estimate(base.replace(strategy='random', r=32), n, c)
    all_flops = flop_estimate(base, n, c)
    attention_flops = flop_estimate(AttentionDescriptor('attention'), n, c)
    ordered = random_flops < all_flops < attention_flops
    yield ('flop-ordering-random-all-attention', 0.0 if ordered else 1.0, 0.0)

    sims = [flop_breakdown(base.replace(strategy='random', r=r), n, c)['similarity'] / r
            for r in (16, 32, 64)]
    yield 'flop-similarity-linear-in-r', (max(sims) - min(sims)) / max(sims), 1e-12

    same = flop_estimate(base.replace(strategy='random', r=n), n, c)
    yield 'flop-all-equals-random-r-n', abs(same - all_flops), 0.0


# --- equivalence ---------------------------------------------------------------------

def suite_equivalence(perturbation=0.0):

    for n, c in itertools.product([4, 8, 16, 32], [4, 8]):
        ks = []
        for k in (1, 3, n // 2, n):
            if k not in ks:
                ks.append(k)
        for k in ks:
            worst = max(check_attention_reduction(n, c, c, c, k, seed,
                                                  perturbation=perturbation).deviation
                        for seed in range(10))
            yield f'attention-reduction-n{n}-c{c}-k{k}', worst, 1e-10

    for grid in ((5, 5), (8, 8)):
        report = check_conv_reduction(grid)
        yield (f'conv-reduction-{grid[0]}x{grid[1]}', report.deviation, report.tolerance,
               f'interior mismatches: {report.details["interior_mismatches"]}')


# --- zoo -----------------------------------------------------------------------------

def suite_zoo(perturbation=0.0):

    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    cfg = ConvNNConfig(k=9, aggregation='regular')

    conv_only = Branching(3, 8, 0.0, cfg, np.random.default_rng(4)).eval()
    dev = np.max(np.abs(conv_only(x).data - conv_only.fuse(conv_only.conv(x)).data))
    yield 'branching-lambda-0-is-conv', dev, 0.0

    convnn_only = Branching(3, 8, 1.0, cfg, np.random.default_rng(5)).eval()
    dev = np.max(np.abs(convnn_only(x).data -
                        convnn_only.fuse(convnn_only.convnn(x)).data))
    yield 'branching-lambda-1-is-convnn', dev, 0.0

    counts = [mini_vgg(LayerKind('branching', lam=lam)).num_parameters()
              for lam in (0.25, 0.5, 0.75)]
    yield 'vgg-parameters-constant-in-lambda', max(counts) - min(counts), 0.0

    n, dim = 16, 8
    tokens = Tensor(rng.normal(size=(n, dim)))
    mixer_cfg = ConvNNConfig(k=n, rho='softmax', normalize=True, aggregation='depthwise',
                             bias=False)
    convnn_mixer = ConvNNMixer(dim, mixer_cfg, np.random.default_rng(6),
                               unit_aggregation=True).eval()
    attention = Attention(dim, np.random.default_rng(6), cosine=True).eval()
    dev = np.max(np.abs(convnn_mixer(tokens).data - attention(tokens).data))
    yield 'vit-convnn-mixer-is-cosine-attention', dev, 1e-10

    images = Tensor(rng.normal(size=(2, 3, 16, 16)))
    shapes_ok = (
        mini_vgg(LayerKind('branching', lam=0.5), image_size=16,
                 num_classes=2)(images).shape == (2, 2) and
        mini_vit(MixerKind('kvt', k=3), num_classes=2)(images).shape == (2, 2)
    )
    yield 'model-output-shapes', 0.0 if shapes_ok else 1.0, 0.0


# --- io ------------------------------------------------------------------------------

def suite_io(perturbation=0.0):

    rng = np.random.default_rng(4)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        worst = 0.0
        for shape in [(), (5,), (2, 3), (2, 3, 4)]:
            array = rng.normal(size=shape).astype(np.float32)
            write_cnnt(tmp.joinpath('t.cnnt'), array)
            back = read_cnnt(tmp.joinpath('t.cnnt'))
            worst = max(worst, 0.0 if back.shape == array.shape else 1.0,
                        float(np.max(np.abs(back - array), initial=0.0)))
        yield 'cnnt-round-trip', worst, 0.0

        data = encode_cnnt(np.ones((2, 2)))
        yield ('cnnt-truncated-rejected',
               _raises(lambda: decode_cnnt(data[:-3]), DatasetFormatError), 0.0)

        model = mini_vgg(rng=np.random.default_rng(0))
        save_checkpoint(model, tmp.joinpath('ckpt'))
        restored = mini_vgg(rng=np.random.default_rng(1))
        load_checkpoint(restored, tmp.joinpath('ckpt'))
        expected = model.state_dict()
        worst = max(float(np.max(np.abs(value - expected[name].astype(np.float32))))
                    for name, value in restored.state_dict().items())
        yield 'checkpoint-round-trip', worst, 0.0

        records = rng.integers(0, 256, size=(2, 1 + CIFAR_PIXELS), dtype=np.uint8)
        records[:, 0] = [3, 7]
        tmp.joinpath('batch.bin').write_bytes(records.tobytes())
        labels, pixels = read_cifar_records([tmp.joinpath('batch.bin')], 2, 1)
        ok = (np.array_equal(labels[:, 0], [3, 7]) and
              np.array_equal(pixels, records[:, 1:]))
        yield 'cifar-records-round-trip', 0.0 if ok else 1.0, 0.0

    first = gen_synthetic(64, 16, image_size=8, seed=7)
    second = gen_synthetic(64, 16, image_size=8, seed=7)
    ok = (first.x_train.tobytes() == second.x_train.tobytes() and
          np.array_equal(first.y_train, second.y_train) and int(first.y_train.sum()) == 32)
    yield 'synthetic-deterministic-and-balanced', 0.0 if ok else 1.0, 0.0

    header = RunMetrics().to_csv()
    expected = ','.join(METRICS_HEADER) + '\n'
    ok = header == 'epoch,split,loss,accuracy,wall_seconds,seed\n' == expected
    yield 'metrics-csv-header', 0.0 if ok else 1.0, 0.0


SUITE_FUNCS = {
    'tensor': suite_tensor,
    'neighbors': suite_neighbors,
    'operator': suite_operator,
    'equivalence': suite_equivalence,
    'zoo': suite_zoo,
    'io': suite_io,
}


def run_suite(suite, perturbation=0.0, echo=True):
    """Run one property suite.

    An exception raised while a property is computed fails the remainder of the suite
    with an infinite deviation.

    Returns
    -------
    list of PropertyResult

    """

    if suite not in SUITE_FUNCS:
        allowed_fmt = ', '.join([f'{i!r}' for i in SUITES])
        raise VerificationError(f'Suite {suite!r} not known. Available suites are: '
                                f'{allowed_fmt}.')
    results = []
    props = SUITE_FUNCS[suite](perturbation=perturbation)
    while True:
        try:
            prop = next(props)
        except StopIteration:
            break
        except Exception as err:
            prop = ('error', np.inf, 0.0, f'{err.__class__.__name__}: {err}')
            result = PropertyResult(suite, *prop)
            results.append(result)
            if echo:
                print(result.format_line(), flush=True)
            break
        result = PropertyResult(suite, *prop)
        results.append(result)
        if echo:
            print(result.format_line(), flush=True)

    return results


def run_suites(filter=None, perturbation=0.0, echo=True):
    """Run every property suite, or only the suite named by `filter`."""

    suites = SUITES if filter is None else [filter]
    if filter is not None and filter not in SUITE_FUNCS:
        allowed_fmt = ', '.join([f'{i!r}' for i in SUITES])
        raise VerificationError(f'Suite {filter!r} not known. Available suites are: '
                                f'{allowed_fmt}.')
    results = []
    for suite in suites:
        results.extend(run_suite(suite, perturbation=perturbation, echo=echo))
    return results
