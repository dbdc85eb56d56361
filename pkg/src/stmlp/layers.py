"""Neural building blocks: each forward has a matching ``*_backward``.

Backward functions take the forward inputs (recomputing cheap intermediates)
and the upstream gradient, and return the input gradient plus a parameter
gradient object of the same type as the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import ShapeError

# tanh approximation of GeLU
GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


@dataclass
class LinearParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"linear params: weight {self.weight.shape}, bias {self.bias.shape}")

    def arrays(self):
        return {"weight": self.weight, "bias": self.bias}


@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("layer norm epsilon must be positive")
        if self.gain.shape != self.bias.shape or self.gain.ndim != 1:
            raise ShapeError(f"layer norm params: gain {self.gain.shape}, bias {self.bias.shape}")

    @property
    def dim(self) -> int:
        return self.gain.shape[0]

    def arrays(self):
        return {"gain": self.gain, "bias": self.bias}


@dataclass
class SEParams:
    reduce: LinearParams  # T -> T_h
    expand: LinearParams  # T_h -> T

    def __post_init__(self):
        if self.reduce.out_features != self.expand.in_features:
            raise ShapeError("SE hidden widths disagree")
        if self.expand.out_features != self.reduce.in_features:
            raise ShapeError("SE must map T back to T")

    @property
    def steps(self) -> int:
        return self.reduce.in_features

    def arrays(self):
        out = {}
        for name, lin in (("reduce", self.reduce), ("expand", self.expand)):
            for k, v in lin.arrays().items():
                out[f"{name}.{k}"] = v
        return out


def se_hidden_width(steps: int) -> int:
    return max(math.ceil(steps / 4), 4)


def init_linear(rng: np.random.Generator, n_in: int, n_out: int) -> LinearParams:
    limit = math.sqrt(1.0 / n_in)
    return LinearParams(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out))


def init_layer_norm(dim: int, epsilon: float = 1e-5) -> LayerNormParams:
    return LayerNormParams(np.ones(dim), np.zeros(dim), epsilon)


def init_se(rng: np.random.Generator, steps: int) -> SEParams:
    hidden = se_hidden_width(steps)
    return SEParams(init_linear(rng, steps, hidden), init_linear(rng, hidden, steps))


# -- linear ---------------------------------------------------------------

def linear(p: LinearParams, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != p.in_features:
        raise ShapeError(f"linear: input {x.shape} does not match weight {p.weight.shape}")
    return x @ p.weight.T + p.bias


def linear_backward(p: LinearParams, x, grad):
    gx = grad @ p.weight
    gw = np.tensordot(grad, x, axes=(tuple(range(grad.ndim - 1)), tuple(range(x.ndim - 1))))
    gb = grad.reshape(-1, grad.shape[-1]).sum(axis=0)
    return gx, LinearParams(gw, gb)


# -- layer norm -----------------------------------------------------------

def _ln_stats(p, x):
    if x.shape[-1] < 2:
        raise ShapeError(f"layer_norm: needs at least 2 features, got {x.shape}")
    if x.shape[-1] != p.dim:
        raise ShapeError(f"layer_norm: input {x.shape} vs normalized dim {p.dim}")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    sigma = np.sqrt(var + p.epsilon)
    return (x - mu) / sigma, sigma


def layer_norm(p: LayerNormParams, x: np.ndarray) -> np.ndarray:
    """Standardize each row over its last axis, then apply gain and bias."""
    xhat, _ = _ln_stats(p, x)
    return xhat * p.gain + p.bias


def layer_norm_backward(p: LayerNormParams, x, grad):
    xhat, sigma = _ln_stats(p, x)
    lead = tuple(range(grad.ndim - 1))
    ggain = np.sum(grad * xhat, axis=lead)
    gbias = np.sum(grad, axis=lead)
    gxhat = grad * p.gain
    gx = (
        gxhat
        - gxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True)
    ) / sigma
    return gx, LayerNormParams(ggain, gbias, p.epsilon)


# -- activations ----------------------------------------------------------

def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x * x * x)))


def gelu_backward(x, grad):
    t = np.tanh(GELU_C * (x + GELU_A * x * x * x))
    du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad):
    return grad * (x > 0)


def softmax(x):
    """Softmax over the last axis, shifted by the max for stability."""
    if x.shape[-1] < 1:
        raise ShapeError("softmax of an empty vector")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_backward(y, grad):
    return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


# -- squeeze and excitation over time steps --------------------------------

def _se_forward(p: SEParams, a):
    if a.shape[-2] != p.steps:
        raise ShapeError(f"se_block: input has {a.shape[-2]} time steps, block expects {p.steps}")
    pooled = tn.mean_over_cols(a)
    hidden_pre = linear(p.reduce, pooled)
    hidden = relu(hidden_pre)
    weights = softmax(linear(p.expand, hidden))
    return pooled, hidden_pre, hidden, weights


def se_block(p: SEParams, a: np.ndarray):
    """Reweight the rows (time steps) of ``a``; returns ``(out, weights)``."""
    *_, weights = _se_forward(p, a)
    return tn.scale_rows(a, weights), weights


def se_block_backward(p: SEParams, a, grad_out, grad_weights=None):
    pooled, hidden_pre, hidden, weights = _se_forward(p, a)
    ga, gw = tn.scale_rows_backward(a, weights, grad_out)
    if grad_weights is not None:
        gw = gw + grad_weights
    g_logits = softmax_backward(weights, gw)
    g_hidden, g_expand = linear_backward(p.expand, hidden, g_logits)
    g_hidden_pre = relu_backward(hidden_pre, g_hidden)
    g_pooled, g_reduce = linear_backward(p.reduce, pooled, g_hidden_pre)
    ga = ga + tn.mean_over_cols_backward(a.shape, g_pooled)
    return ga, SEParams(g_reduce, g_expand)


def se_columns(p: SEParams, a: np.ndarray) -> np.ndarray:
    """Per-column time weighting for the additive SE variant.

    Each feature column of ``a`` (a T-vector) goes through reduce, ReLU,
    expand and a softmax over time. The result has the shape of ``a`` and is
    meant to be added to the skip path.
    """
    if a.shape[-2] != p.steps:
        raise ShapeError(f"se_columns: input has {a.shape[-2]} time steps, block expects {p.steps}")
    cols = tn.transpose(a)
    z = softmax(linear(p.expand, relu(linear(p.reduce, cols))))
    return tn.transpose(z)


def se_columns_backward(p: SEParams, a, grad):
    cols = tn.transpose(a)
    hidden_pre = linear(p.reduce, cols)
    hidden = relu(hidden_pre)
    z = softmax(linear(p.expand, hidden))
    g_logits = softmax_backward(z, tn.transpose_backward(grad))
    g_hidden, g_expand = linear_backward(p.expand, hidden, g_logits)
    g_cols, g_reduce = linear_backward(p.reduce, cols, relu_backward(hidden_pre, g_hidden))
    return tn.transpose_backward(g_cols), SEParams(g_reduce, g_expand)
