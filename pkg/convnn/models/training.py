"""`convnn.models.training.py`

Loss, gradient clipping, the AdamW optimiser and the epoch loop used by
`convnn train`.

"""

import time

import numpy as np
import structlog

from convnn.errors import ConvNNConfigError
from convnn.models.tensor import CrossEntropy, Tape, as_tensor

log = structlog.get_logger()

RECORD_FIELDS = ['epoch', 'split', 'loss', 'accuracy', 'wall_seconds']
METRICS_HEADER = RECORD_FIELDS + ['seed']


def cross_entropy(logits, labels):
    """Mean over the batch of −log softmax(logits)[label], via log-sum-exp."""
    return CrossEntropy.apply(as_tensor(logits), labels=np.asarray(labels, dtype=np.int64))


def clip_grad_norm(grads, max_norm):
    """Scale gradients so that their global ℓ2 norm is at most `max_norm`.

    Parameters
    ----------
    grads : list of ndarray
    max_norm : float

    Returns
    -------
    clipped : list of ndarray
    total_norm : float
        The norm before clipping.

    """

    if max_norm <= 0:
        raise ValueError(f'`max_norm` must be positive, but is {max_norm!r}.')
    total_norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total_norm > max_norm:
        scale = max_norm / total_norm
        grads = [g * scale for g in grads]
    return grads, total_norm


class TrainConfig(object):
    """Optimisation settings of a training run."""

    __slots__ = ['_lr', '_weight_decay', '_epochs', '_batch', '_clip_norm', '_seed',
                 '_dropout', '_timing', '_betas', '_eps']

    def __init__(self, lr=1e-4, weight_decay=0.01, epochs=1, batch=64, clip_norm=1.0,
                 seed=0, dropout=0.0, timing=False, betas=(0.9, 0.999), eps=1e-8):

        for name, value in (('lr', lr), ('epochs', epochs), ('batch', batch),
                            ('clip_norm', clip_norm)):
            if value <= 0:
                raise ConvNNConfigError(f'`{name}` must be positive, not {value!r}.')
        if weight_decay < 0:
            raise ConvNNConfigError(f'`weight_decay` must be non-negative, not '
                                    f'{weight_decay!r}.')
        if not 0 <= dropout < 1:
            raise ConvNNConfigError(f'`dropout` must be in [0, 1), not {dropout!r}.')

        self._lr = float(lr)
        self._weight_decay = float(weight_decay)
        self._epochs = int(epochs)
        self._batch = int(batch)
        self._clip_norm = float(clip_norm)
        self._seed = int(seed)
        self._dropout = float(dropout)
        self._timing = bool(timing)
        self._betas = tuple(betas)
        self._eps = float(eps)

    def __repr__(self):
        args = ', '.join(f'{k}={v!r}' for k, v in self.as_dict().items())
        return f'{self.__class__.__name__}({args})'

    @property
    def lr(self):
        return self._lr

    @property
    def weight_decay(self):
        return self._weight_decay

    @property
    def epochs(self):
        return self._epochs

    @property
    def batch(self):
        return self._batch

    @property
    def clip_norm(self):
        return self._clip_norm

    @property
    def seed(self):
        return self._seed

    @property
    def dropout(self):
        return self._dropout

    @property
    def timing(self):
        return self._timing

    @property
    def betas(self):
        return self._betas

    @property
    def eps(self):
        return self._eps

    def as_dict(self):
        return {
            'lr': self.lr,
            'weight_decay': self.weight_decay,
            'epochs': self.epochs,
            'batch': self.batch,
            'clip_norm': self.clip_norm,
            'seed': self.seed,
            'dropout': self.dropout,
            'timing': self.timing,
        }


def adamw_step(params, grads, state, t, cfg):
    """One AdamW update with decoupled weight decay and bias-corrected moments.

    Parameters
    ----------
    params : list of ndarray
    grads : list of ndarray
    state : dict
        Holds first and second moment lists under "m" and "v"; initialised to zeros if
        empty.
    t : int
        Step number, starting at 1.
    cfg : TrainConfig

    Returns
    -------
    params : list of ndarray
    state : dict

    """

    if t < 1:
        raise ValueError(f'Step number must be at least 1, not {t}.')
    beta1, beta2 = cfg.betas
    if not state:
        state['m'] = [np.zeros_like(p) for p in params]
        state['v'] = [np.zeros_like(p) for p in params]

    correction1 = 1 - beta1 ** t
    correction2 = 1 - beta2 ** t
    updated = []
    for idx, (p, g) in enumerate(zip(params, grads)):
        m = beta1 * state['m'][idx] + (1 - beta1) * g
        v = beta2 * state['v'][idx] + (1 - beta2) * g * g
        state['m'][idx] = m
        state['v'][idx] = v
        p = p * (1 - cfg.lr * cfg.weight_decay)
        p = p - cfg.lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        updated.append(p)

    return updated, state


class AdamW(object):
    """AdamW over the learnable parameters of a model."""

    __slots__ = ['_params', '_cfg', '_state', '_t']

    def __init__(self, params, cfg):
        self._params = list(params)
        self._cfg = cfg
        self._state = {}
        self._t = 0

    @property
    def t(self):
        return self._t

    def step(self):
        """Clip and apply the current gradients; returns the pre-clip gradient norm."""
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self._params]
        grads, norm = clip_grad_norm(grads, self._cfg.clip_norm)
        self._t += 1
        values, self._state = adamw_step([p.data for p in self._params], grads,
                                         self._state, self._t, self._cfg)
        for param, value in zip(self._params, values):
            param.assign(value)
        return norm

    def zero_grad(self):
        for p in self._params:
            p.zero_grad()


class EpochRecord(object):

    __slots__ = ['epoch', 'split', 'loss', 'accuracy', 'wall_seconds']

    def __init__(self, epoch, split, loss, accuracy, wall_seconds=None):
        self.epoch = epoch
        self.split = split
        self.loss = loss
        self.accuracy = accuracy
        self.wall_seconds = wall_seconds

    def as_row(self):
        wall = '' if self.wall_seconds is None else f'{self.wall_seconds:.6f}'
        return [str(self.epoch), self.split, repr(float(self.loss)),
                repr(float(self.accuracy)), wall]


class RunMetrics(object):
    """Per-epoch records of a run plus a final summary.

    The run seed, when given, is repeated on every CSV row.

    """

    __slots__ = ['_records', '_summary', '_seed']

    def __init__(self, seed=None):
        self._records = []
        self._summary = {}
        self._seed = seed

    def __len__(self):
        return len(self._records)

    @property
    def seed(self):
        return self._seed

    @property
    def records(self):
        return list(self._records)

    @property
    def summary(self):
        return self._summary

    def add(self, record):
        if not 0 <= record.accuracy <= 1:
            raise ValueError(f'Accuracy must be in [0, 1], not {record.accuracy!r}.')
        if self._records:
            last = self._records[-1].epoch
            same_epoch = [i.split for i in self._records if i.epoch == record.epoch]
            if record.epoch < last or record.split in same_epoch:
                raise ValueError(f'Record for epoch {record.epoch} ({record.split}) is out '
                                 f'of order.')
        self._records.append(record)

    def last(self, split):
        for record in reversed(self._records):
            if record.split == split:
                return record
        return None

    def finalise(self, **extra):
        for split in ('train', 'test'):
            record = self.last(split)
            if record is not None:
                self._summary[f'final_{split}_loss'] = float(record.loss)
                self._summary[f'final_{split}_accuracy'] = float(record.accuracy)
        self._summary.update(extra)

    def to_csv(self):
        seed = '' if self.seed is None else str(self.seed)
        lines = [','.join(METRICS_HEADER)]
        lines.extend(','.join(i.as_row() + [seed]) for i in self._records)
        return '\n'.join(lines) + '\n'

    def as_dict(self):
        return {
            'records': {k: [getattr(i, k) if getattr(i, k) is not None else np.nan
                            for i in self._records] for k in RECORD_FIELDS},
            'summary': dict(self._summary),
            'seed': self.seed,
        }


def _batches(num, batch, order=None):
    order = np.arange(num) if order is None else order
    for start in range(0, num, batch):
        yield order[start:start + batch]


def evaluate(model, x, y, batch=256):
    """Mean loss and accuracy of `model` in evaluation mode."""
    model.eval()
    total_loss = 0.0
    correct = 0
    for idx in _batches(len(y), batch):
        logits = model(as_tensor(x[idx]))
        total_loss += cross_entropy(logits, y[idx]).item() * len(idx)
        correct += int(np.sum(np.argmax(logits.data, axis=-1) == y[idx]))
    model.train()
    return total_loss / len(y), correct / len(y)


def train(model, dataset, cfg, rng=None):
    """Train `model` on `dataset` with AdamW.

    All randomness (batch order, dropout masks and per-pass candidate seeds) is drawn
    from `rng`, by default a generator seeded with `cfg.seed`.

    Returns
    -------
    RunMetrics

    """

    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    optimiser = AdamW(model.parameters(), cfg)
    metrics = RunMetrics(seed=cfg.seed)
    model.train()

    num_train = len(dataset.y_train)
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        total_loss = 0.0
        correct = 0
        for idx in _batches(num_train, cfg.batch, rng.permutation(num_train)):
            optimiser.zero_grad()
            labels = dataset.y_train[idx]
            with Tape() as tape:
                logits = model(as_tensor(dataset.x_train[idx]), rng=rng)
                loss = cross_entropy(logits, labels)
            tape.backward(loss)
            optimiser.step()
            total_loss += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == labels))

        wall = time.perf_counter() - start if cfg.timing else None
        train_rec = EpochRecord(epoch, 'train', total_loss / num_train, correct / num_train,
                                wall)
        metrics.add(train_rec)

        test_loss, test_acc = evaluate(model, dataset.x_test, dataset.y_test)
        wall = time.perf_counter() - start if cfg.timing else None
        metrics.add(EpochRecord(epoch, 'test', test_loss, test_acc, wall))

        log.info('epoch', epoch=epoch, train_loss=train_rec.loss,
                 train_accuracy=train_rec.accuracy, test_loss=test_loss,
                 test_accuracy=test_acc)

    metrics.finalise(num_parameters=model.num_parameters(),
                     num_frozen_parameters=model.num_frozen_parameters())
    return metrics
