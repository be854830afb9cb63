"""`convnn.models.gradcheck.py`

Central-difference checks of tape gradients.

"""

import numpy as np

from convnn.models.tensor import Tape


def numerical_grad(func, tensor, step=1e-6):
    """Central finite-difference gradient of scalar `func()` with respect to `tensor`.

    `tensor` is perturbed in place one entry at a time and restored afterwards.

    """

    data = tensor.data
    grad = np.zeros_like(data)
    flat = data.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = func().item()
        flat[i] = orig - step
        minus = func().item()
        flat[i] = orig
        grad_flat[i] = (plus - minus) / (2 * step)

    return grad


def analytic_grads(func, tensors):
    for i in tensors:
        i.zero_grad()
    with Tape() as tape:
        out = func()
    tape.backward(out)
    return [np.zeros(i.shape) if i.grad is None else i.grad.copy() for i in tensors]


def relative_error(analytic, numeric, floor=1e-2):
    """Maximum entrywise error, relative to the larger magnitude of the two values (or
    to `floor`, for entries near zero)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(func, tensors, step=1e-6, tolerance=1e-5, floor=1e-2):
    """Compare tape gradients of `func` with central differences.

    Parameters
    ----------
    func : callable
        Zero-argument callable returning a scalar `Tensor`. It is called once under a
        tape and twice per input entry without one.
    tensors : list of Tensor
        Leaves with `requires_grad=True`.
    step : float, optional
    tolerance : float, optional
        Maximum allowed relative error.
    floor : float, optional
        Magnitude below which errors are measured absolutely.

    Returns
    -------
    passed : bool
    max_error : float

    """

    analytic = analytic_grads(func, tensors)
    max_error = 0.0
    for tensor, grad in zip(tensors, analytic):
        numeric = numerical_grad(func, tensor, step=step)
        max_error = max(max_error, relative_error(grad, numeric, floor=floor))

    return max_error <= tolerance, max_error
