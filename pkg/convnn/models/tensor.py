"""`convnn.models.tensor.py`

Dense float64 tensors, the primitive operations the ConvNN operator and the model zoo
are built from, and a `Tape` that records primitive applications so that gradients
can be obtained by reverse-mode differentiation.

Primitives act on the trailing axes of their operands; any leading axes are treated as
batch axes, which lets the same code serve single samples and mini-batches.

"""

import threading

import numpy as np

from convnn.errors import AutodiffError, DimensionError, IndexRangeError

_TAPES = threading.local()


def get_active_tape():
    """Get the innermost tape entered on this thread, or None."""
    stack = getattr(_TAPES, 'stack', None)
    return stack[-1] if stack else None


def _fmt_shape(shape):
    return '[' + '×'.join(str(i) for i in shape) + ']'


class Tensor(object):
    """A dense n-dimensional array of 64-bit floats that may take part in
    differentiation.

    Parameters
    ----------
    data : array_like
        Values; copied and stored row-major as float64.
    requires_grad : bool, optional
        If True, operations recorded on an active `Tape` will propagate gradients
        back to this tensor.

    """

    __slots__ = ['_data', '_requires_grad', '_grad', '_tape']

    def __init__(self, data, requires_grad=False):
        self._data = np.array(data, dtype=np.float64, order='C')
        self._requires_grad = bool(requires_grad)
        self._grad = None
        self._tape = None

    def __repr__(self):
        return (f'{self.__class__.__name__}(shape={_fmt_shape(self.shape)}, '
                f'requires_grad={self.requires_grad!r})')

    @classmethod
    def _wrap(cls, array):
        """Wrap an array produced by a primitive without copying it."""
        out = cls.__new__(cls)
        out._data = np.ascontiguousarray(array, dtype=np.float64)
        out._requires_grad = False
        out._grad = None
        out._tape = None
        return out

    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def requires_grad(self):
        return self._requires_grad

    @property
    def grad(self):
        return self._grad

    @property
    def is_leaf(self):
        return self._tape is None

    def zero_grad(self):
        self._grad = None

    def _accumulate_grad(self, grad):
        if self._grad is None:
            self._grad = np.array(grad, dtype=np.float64)
        else:
            self._grad = self._grad + grad

    def detach(self):
        return Tensor._wrap(self._data.copy())

    def numpy(self):
        return self._data.copy()

    def item(self):
        if self.size != 1:
            raise DimensionError(f'Only single-valued tensors can be converted to a '
                                 f'float; shape is {_fmt_shape(self.shape)}.')
        return float(self._data.reshape(-1)[0])

    def backward(self):
        """Propagate gradients from this scalar to every leaf that requires them."""
        if self._tape is None:
            raise AutodiffError('Tensor was not produced by primitives recorded on a '
                                'tape; nothing to differentiate.')
        self._tape.backward(self)

    def __add__(self, other):
        return Add.apply(self, as_tensor(other))

    def __radd__(self, other):
        return Add.apply(as_tensor(other), self)

    def __sub__(self, other):
        return Sub.apply(self, as_tensor(other))

    def __rsub__(self, other):
        return Sub.apply(as_tensor(other), self)

    def __mul__(self, other):
        return Mul.apply(self, as_tensor(other))

    def __rmul__(self, other):
        return Mul.apply(as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError('Division is only supported by a constant.')
        return Mul.apply(self, as_tensor(1.0 / other))

    def __neg__(self):
        return Mul.apply(self, as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return Slice.apply(self, index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes)

    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named, optimisable leaf tensor. Frozen parameters do not require gradients
    and are skipped by the optimiser."""

    __slots__ = ['_name', '_frozen']

    def __init__(self, data, name=None, frozen=False):
        super().__init__(data, requires_grad=not frozen)
        self._name = name
        self._frozen = bool(frozen)

    def __repr__(self):
        return (f'{self.__class__.__name__}(name={self.name!r}, '
                f'shape={_fmt_shape(self.shape)}, frozen={self.frozen!r})')

    @property
    def name(self):
        return self._name

    @name.setter
    def name(self, name):
        self._name = name

    @property
    def frozen(self):
        return self._frozen

    def freeze(self):
        self._frozen = True
        self._requires_grad = False
        self._grad = None

    def assign(self, values):
        """Replace the parameter values in place (used by optimisers and checkpoint
        loading)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            raise DimensionError(f'Cannot assign values of shape {_fmt_shape(values.shape)}'
                                 f' to parameter {self.name!r} of shape '
                                 f'{_fmt_shape(self.shape)}.')
        self._data = np.array(values, order='C')


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class TapeNode(object):

    __slots__ = ['function', 'inputs', 'output']

    def __init__(self, function, inputs, output):
        self.function = function
        self.inputs = inputs
        self.output = output

    def __repr__(self):
        return (f'{self.__class__.__name__}({self.function.__class__.__name__}, '
                f'num_inputs={len(self.inputs)})')


class Tape(object):
    """Ordered record of primitive applications.

    Nodes are appended in execution order, so every node's inputs precede it. A tape is
    owned by one thread; enter it as a context manager to make it the recording target.

    Examples
    --------
    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4.])

    """

    __slots__ = ['_nodes']

    def __init__(self):
        self._nodes = []

    def __repr__(self):
        return f'{self.__class__.__name__}(num_nodes={len(self)})'

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        if not hasattr(_TAPES, 'stack'):
            _TAPES.stack = []
        _TAPES.stack.append(self)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        _TAPES.stack.pop()

    @property
    def nodes(self):
        return tuple(self._nodes)

    def record(self, function, inputs, output):
        output._requires_grad = True
        output._tape = self
        self._nodes.append(TapeNode(function, inputs, output))

    def backward(self, output):
        """Differentiate a scalar output with respect to all leaves that require
        gradients; leaf gradients are accumulated into `Tensor.grad`."""

        if output.size != 1:
            raise AutodiffError(f'Backward requires a scalar output, but the output has '
                                f'shape {_fmt_shape(output.shape)}.')
        if output._tape is not self:
            raise AutodiffError('Output was not recorded on this tape.')

        pending = {id(output): np.ones_like(output.data)}
        for node in reversed(self._nodes):
            grad = pending.pop(id(node.output), None)
            if grad is None:
                continue
            input_grads = node.function.backward(grad)
            for tensor, tensor_grad in zip(node.inputs, input_grads):
                if tensor_grad is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    tensor._accumulate_grad(tensor_grad)
                else:
                    key = id(tensor)
                    pending[key] = pending[key] + tensor_grad if key in pending else tensor_grad


def backward(output):
    """Propagate gradients from a scalar tensor produced on a tape."""
    output.backward()


class Function(object):
    """Base class of differentiable primitives.

    Subclasses implement `forward`, receiving the arrays of the input tensors plus any
    keyword options, and `backward`, returning one gradient array (or None) per input.

    """

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors, **kwargs):
        function = cls()
        out = Tensor._wrap(function.forward(*[i.data for i in tensors], **kwargs))
        tape = get_active_tape()
        if tape is not None and any(i.requires_grad for i in tensors):
            tape.record(function, tensors, out)
        return out


def unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):

    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):

    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):

    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return (unbroadcast(grad * self.y, self.x.shape),
                unbroadcast(grad * self.x, self.y.shape))


class MatMul(Function):

    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise DimensionError(f'Cannot multiply {_fmt_shape(x.shape)} by '
                                 f'{_fmt_shape(y.shape)}: inner extents must match.')
        self.x, self.y = x, y
        return np.matmul(x, y)

    def backward(self, grad):
        dx = np.matmul(grad, np.swapaxes(self.y, -1, -2))
        dy = np.matmul(np.swapaxes(self.x, -1, -2), grad)
        return unbroadcast(dx, self.x.shape), unbroadcast(dy, self.y.shape)


def matmul(a, b):
    """Matrix product over the last two axes; `dA = dY·Bᵀ`, `dB = Aᵀ·dY`."""
    return MatMul.apply(as_tensor(a), as_tensor(b))


class Sum(Function):

    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Mean(Function):

    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims))
        self.count = x.size // max(out.size, 1) if x.size else 1
        return out

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape).copy(),)


class Reshape(Function):

    def forward(self, x, shape):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):

    def forward(self, x, axes):
        self.axes = tuple(axes)
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


def swap_last(x):
    """Exchange the last two axes."""
    axes = list(range(x.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return Transpose.apply(x, axes=axes)


class Slice(Function):

    def forward(self, x, index):
        self.shape, self.index = x.shape, index
        return np.array(x[index])

    def backward(self, grad):
        out = np.zeros(self.shape)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):

    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([i.shape[axis] for i in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors, axis=0):
    tensors = [as_tensor(i) for i in tensors]
    if len(tensors) == 1:
        return tensors[0]
    return Concat.apply(*tensors, axis=axis)


class ReLU(Function):

    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class GELU(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    _C = np.sqrt(2.0 / np.pi)

    def forward(self, x):
        self.x = x
        self.t = np.tanh(self._C * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        dt = (1.0 - t ** 2) * self._C * (1.0 + 3 * 0.044715 * x ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * dt),)


class Softmax(Function):
    """Softmax over the last axis, with the row maximum subtracted first."""

    def forward(self, x):
        shifted = np.exp(x - x.max(axis=-1, keepdims=True))
        self.y = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


def softmax_rows(x):
    """Normalise each row (last axis) of `x` into a probability distribution."""
    return Softmax.apply(as_tensor(x))


class L2Normalize(Function):

    def forward(self, x, eps=1e-12):
        norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        self.guarded = norm < eps
        self.denom = np.where(self.guarded, eps, norm)
        self.y = x / self.denom
        return self.y

    def backward(self, grad):
        radial = self.y * (grad * self.y).sum(axis=-1, keepdims=True)
        dx = np.where(self.guarded, grad, grad - radial) / self.denom
        return (dx,)


def l2_normalize_rows(x, eps=1e-12):
    """Scale each row (last axis) to unit Euclidean norm. Rows whose norm is below
    `eps` are divided by `eps` instead."""
    if eps <= 0:
        raise ValueError(f'`eps` must be positive, but is {eps!r}.')
    return L2Normalize.apply(as_tensor(x), eps=eps)


class LayerNorm(Function):
    """Normalisation of the last axis to zero mean and unit variance (no affine)."""

    def forward(self, x, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        self.centred = x - mu
        self.inv_std = 1.0 / np.sqrt((self.centred ** 2).mean(axis=-1, keepdims=True) + eps)
        self.y = self.centred * self.inv_std
        return self.y

    def backward(self, grad):
        y = self.y
        g_mean = grad.mean(axis=-1, keepdims=True)
        gy_mean = (grad * y).mean(axis=-1, keepdims=True)
        return ((grad - g_mean - y * gy_mean) * self.inv_std,)


def _flat_rows(array, trailing):
    lead = array.shape[:array.ndim - trailing]
    return lead, array.reshape((-1,) + array.shape[array.ndim - trailing:])


class GatherRows(Function):
    """`out[..., i, j, :] = v[..., idx[..., i, j], :]`; indices are constants."""

    def forward(self, v, idx):
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= v.shape[-2]):
            bad = idx.min() if idx.min() < 0 else idx.max()
            raise IndexRangeError(f'Gather index {int(bad)} is out of range for '
                                  f'{v.shape[-2]} source rows.')
        if v.shape[:-2] != idx.shape[:-2]:
            raise DimensionError(f'Batch extents of source {_fmt_shape(v.shape)} and '
                                 f'index {_fmt_shape(idx.shape)} do not agree.')
        self.shape = v.shape
        lead, v_flat = _flat_rows(v, 2)
        _, idx_flat = _flat_rows(idx, 2)
        self.batch = np.arange(v_flat.shape[0])[:, None, None]
        self.idx = idx_flat
        out = v_flat[self.batch, idx_flat]
        return out.reshape(lead + idx.shape[-2:] + (v.shape[-1],))

    def backward(self, grad):
        dv = np.zeros((self.idx.shape[0],) + self.shape[-2:])
        g = grad.reshape(self.idx.shape + (self.shape[-1],))
        np.add.at(dv, (self.batch, self.idx), g)
        return (dv.reshape(self.shape),)


def gather_rows(v, idx):
    """Gather rows of `v` ([..., n, c]) by an index matrix ([..., n, k]), giving
    [..., n, k, c]. Gradients scatter-add back to the source rows."""
    return GatherRows.apply(as_tensor(v), idx=idx)


class TakeRows(Function):
    """`out[..., j, :] = x[..., rows[j], :]` for a shared 1D list of distinct rows."""

    def forward(self, x, rows):
        self.shape, self.rows = x.shape, np.asarray(rows)
        return x[..., self.rows, :]

    def backward(self, grad):
        out = np.zeros(self.shape)
        np.add.at(out, (Ellipsis, self.rows, slice(None)), grad)
        return (out,)


def take_rows(x, rows):
    return TakeRows.apply(as_tensor(x), rows=rows)


class TakeAlongLast(Function):
    """`out[..., i, j] = x[..., i, idx[..., i, j]]`; indices are constants."""

    def forward(self, x, idx):
        self.shape = x.shape
        _, x_flat = _flat_rows(x, 1)
        self.idx = np.asarray(idx).reshape(x_flat.shape[0], -1)
        self.rows = np.arange(x_flat.shape[0])[:, None]
        return x_flat[self.rows, self.idx].reshape(np.shape(idx))

    def backward(self, grad):
        dx = np.zeros((self.idx.shape[0], self.shape[-1]))
        np.add.at(dx, (self.rows, self.idx), grad.reshape(self.idx.shape))
        return (dx.reshape(self.shape),)


def take_along_last(x, idx):
    return TakeAlongLast.apply(as_tensor(x), idx=idx)


def _windows_1d(x, kernel, stride):
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=-1)
    return windows[..., ::stride, :]


def _scatter_windows_1d(dwin, length, kernel, stride):
    out = np.zeros(dwin.shape[:-2] + (length,))
    num = dwin.shape[-2]
    for j in range(kernel):
        out[..., j:j + stride * (num - 1) + 1:stride] += dwin[..., j]
    return out


class Conv1dRegular(Function):
    """Cross-correlation of [..., c, L] with weights [out, c, kernel], no padding."""

    def forward(self, x, weight, stride=1):
        kernel = weight.shape[-1]
        if x.shape[-2] != weight.shape[1]:
            raise DimensionError(f'Input {_fmt_shape(x.shape)} has {x.shape[-2]} channels '
                                 f'but weights {_fmt_shape(weight.shape)} expect '
                                 f'{weight.shape[1]}.')
        if kernel > x.shape[-1]:
            raise DimensionError(f'Kernel of size {kernel} exceeds the length of input '
                                 f'{_fmt_shape(x.shape)}.')
        self.length, self.kernel, self.stride = x.shape[-1], kernel, stride
        self.windows = _windows_1d(x, kernel, stride)
        self.weight = weight
        return np.einsum('...clj,ocj->...ol', self.windows, weight, optimize=True)

    def backward(self, grad):
        dweight = np.einsum('...clj,...ol->ocj', self.windows, grad, optimize=True)
        dwin = np.einsum('...ol,ocj->...clj', grad, self.weight, optimize=True)
        dx = _scatter_windows_1d(dwin, self.length, self.kernel, self.stride)
        return dx, dweight


class Conv1dDepthwise(Function):
    """Per-channel cross-correlation of [..., c, L] with weights [c, kernel]."""

    def forward(self, x, weight, stride=1):
        kernel = weight.shape[-1]
        if x.shape[-2] != weight.shape[0]:
            raise DimensionError(f'Depthwise weights {_fmt_shape(weight.shape)} do not '
                                 f'match the {x.shape[-2]} channels of input '
                                 f'{_fmt_shape(x.shape)}.')
        if kernel > x.shape[-1]:
            raise DimensionError(f'Kernel of size {kernel} exceeds the length of input '
                                 f'{_fmt_shape(x.shape)}.')
        self.length, self.kernel, self.stride = x.shape[-1], kernel, stride
        self.windows = _windows_1d(x, kernel, stride)
        self.weight = weight
        return np.einsum('...clj,cj->...cl', self.windows, weight, optimize=True)

    def backward(self, grad):
        dweight = np.einsum('...clj,...cl->cj', self.windows, grad, optimize=True)
        dwin = np.einsum('...cl,cj->...clj', grad, self.weight, optimize=True)
        dx = _scatter_windows_1d(dwin, self.length, self.kernel, self.stride)
        return dx, dweight


class Conv2d(Function):
    """Stride-1 cross-correlation of [b, c, H, W] with weights [out, c, kh, kw] and
    symmetric zero padding."""

    def forward(self, x, weight, padding=0):
        if x.shape[-3] != weight.shape[1]:
            raise DimensionError(f'Input {_fmt_shape(x.shape)} has {x.shape[-3]} channels '
                                 f'but weights {_fmt_shape(weight.shape)} expect '
                                 f'{weight.shape[1]}.')
        pad = [(0, 0)] * (x.ndim - 2) + [(padding, padding)] * 2
        x_pad = np.pad(x, pad)
        kh, kw = weight.shape[-2:]
        if kh > x_pad.shape[-2] or kw > x_pad.shape[-1]:
            raise DimensionError(f'Kernel {kh}×{kw} does not fit input '
                                 f'{_fmt_shape(x.shape)} with padding {padding}.')
        self.shape, self.padding, self.padded_shape = x.shape, padding, x_pad.shape
        self.windows = np.lib.stride_tricks.sliding_window_view(x_pad, (kh, kw),
                                                                axis=(-2, -1))
        self.weight = weight
        return np.einsum('...chwij,ocij->...ohw', self.windows, weight, optimize=True)

    def backward(self, grad):
        dweight = np.einsum('...chwij,...ohw->ocij', self.windows, grad, optimize=True)
        dwin = np.einsum('...ohw,ocij->...chwij', grad, self.weight, optimize=True)
        dx_pad = np.zeros(self.padded_shape)
        out_h, out_w = grad.shape[-2:]
        kh, kw = self.weight.shape[-2:]
        for i in range(kh):
            for j in range(kw):
                dx_pad[..., i:i + out_h, j:j + out_w] += dwin[..., i, j]
        p = self.padding
        dx = dx_pad[..., p:p + self.shape[-2], p:p + self.shape[-1]]
        return dx, dweight


class MaxPool2d(Function):
    """Non-overlapping 2×2 max pooling over the last two axes; ties route the
    gradient to the first maximum."""

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise DimensionError(f'2×2 pooling needs even spatial extents, got '
                                 f'{_fmt_shape(x.shape)}.')
        self.shape = x.shape
        lead = x.shape[:-2]
        blocks = x.reshape(lead + (h // 2, 2, w // 2, 2))
        n = len(lead)
        blocks = np.moveaxis(blocks, n + 1, n + 2).reshape(lead + (h // 2, w // 2, 4))
        self.argmax = blocks.argmax(axis=-1)
        return np.take_along_axis(blocks, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        lead = self.shape[:-2]
        h, w = self.shape[-2:]
        dblocks = np.zeros(grad.shape + (4,))
        np.put_along_axis(dblocks, self.argmax[..., None], grad[..., None], axis=-1)
        n = len(lead)
        dblocks = dblocks.reshape(lead + (h // 2, w // 2, 2, 2))
        dblocks = np.moveaxis(dblocks, n + 2, n + 1)
        return (dblocks.reshape(self.shape),)


class CrossEntropy(Function):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""

    def forward(self, logits, labels):
        labels = np.asarray(labels)
        num_classes = logits.shape[-1]
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            bad = labels.min() if labels.min() < 0 else labels.max()
            raise IndexRangeError(f'Label {int(bad)} is out of range for '
                                  f'{num_classes} classes.')
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        log_probs = shifted - log_z
        self.probs = np.exp(log_probs)
        self.labels = labels
        picked = np.take_along_axis(log_probs, labels[:, None], axis=-1)
        return np.asarray(-picked.mean())

    def backward(self, grad):
        onehot = np.zeros_like(self.probs)
        np.put_along_axis(onehot, self.labels[:, None], 1.0, axis=-1)
        return (grad * (self.probs - onehot) / len(self.labels),)


def relu(x):
    return ReLU.apply(x)


def gelu(x):
    return GELU.apply(x)


def layer_norm(x, eps=1e-5):
    return LayerNorm.apply(x, eps=eps)


def max_pool_2x2(x):
    return MaxPool2d.apply(x)


def conv2d(x, weight, bias=None, padding=0):
    out = Conv2d.apply(as_tensor(x), weight, padding=padding)
    if bias is not None:
        out = out + bias.reshape(-1, 1, 1)
    return out


def pixel_unshuffle(x, p):
    """Rearrange each p×p spatial block of [..., c, H, W] into p² channels, giving
    [..., c·p², H/p, W/p]. Channel `c·p² + i·p + j` holds block offset (i, j)."""
    x = as_tensor(x)
    c, h, w = x.shape[-3:]
    if p < 1 or h % p or w % p:
        raise DimensionError(f'Patch size {p} does not divide the spatial extents of '
                             f'{_fmt_shape(x.shape)}.')
    if p == 1:
        return x
    lead = x.shape[:-3]
    n = len(lead)
    out = x.reshape(lead + (c, h // p, p, w // p, p))
    axes = list(range(n)) + [n, n + 2, n + 4, n + 1, n + 3]
    out = out.transpose(axes)
    return out.reshape(lead + (c * p * p, h // p, w // p))


def pixel_shuffle(x, p):
    """Inverse of `pixel_unshuffle`."""
    x = as_tensor(x)
    cpp, h, w = x.shape[-3:]
    if p < 1 or cpp % (p * p):
        raise DimensionError(f'Channel extent of {_fmt_shape(x.shape)} is not divisible '
                             f'by {p * p}.')
    if p == 1:
        return x
    lead = x.shape[:-3]
    n = len(lead)
    c = cpp // (p * p)
    out = x.reshape(lead + (c, p, p, h, w))
    axes = list(range(n)) + [n, n + 3, n + 1, n + 4, n + 2]
    out = out.transpose(axes)
    return out.reshape(lead + (c, h * p, w * p))
