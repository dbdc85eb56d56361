"""Dense matrix kernel with forward ops and their vector-Jacobian products.

A matrix is a ``float64`` numpy array of shape ``(rows, cols)``. Every op
also accepts a stack of matrices ``(..., rows, cols)``; leading axes are
carried through untouched, and backward rules reduce parameter-like operands
back to their own shape.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def as_matrix(a, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim < 2:
        raise ShapeError(f"expected a matrix, got shape {arr.shape}")
    return arr


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # undo numpy broadcasting over leading stack axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a, b, grad):
    grad_a = _sum_to(grad @ np.swapaxes(b, -1, -2), a.shape)
    grad_b = _sum_to(np.swapaxes(a, -1, -2) @ grad, b.shape)
    return grad_a, grad_b


def transpose(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def transpose_backward(grad):
    return np.swapaxes(grad, -1, -2)


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _check_same("add", a, b)
    return a + b


def add_backward(grad):
    return grad, grad


def hadamard(a, b):
    _check_same("hadamard", a, b)
    return a * b


def hadamard_backward(a, b, grad):
    return grad * b, grad * a


def scale_rows(a, w):
    """Multiply row ``i`` of ``a`` by ``w[i]``."""
    if w.shape != a.shape[:-1]:
        raise ShapeError(f"scale_rows: weights {w.shape} do not match rows of {a.shape}")
    return a * w[..., None]


def scale_rows_backward(a, w, grad):
    return grad * w[..., None], np.sum(grad * a, axis=-1)


def _check_nonempty(op, a):
    if a.shape[-1] < 1 or a.shape[-2] < 1:
        raise ShapeError(f"{op}: empty matrix {a.shape}")


def mean_over_rows(a):
    """Column means: ``(m, n) -> (n,)``."""
    _check_nonempty("mean_over_rows", a)
    return a.mean(axis=-2)


def mean_over_rows_backward(shape, grad):
    m = shape[-2]
    return np.broadcast_to(grad[..., None, :] / m, shape).copy()


def mean_over_cols(a):
    """Row means: ``(m, n) -> (m,)``."""
    _check_nonempty("mean_over_cols", a)
    return a.mean(axis=-1)


def mean_over_cols_backward(shape, grad):
    n = shape[-1]
    return np.broadcast_to(grad[..., :, None] / n, shape).copy()
