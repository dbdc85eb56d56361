"""Objective, optimizers (Adam, RAdam, Ranger), LR schedules, training loop.

Optimizers update a ``name -> array`` parameter dict in place; state is
kept per name so updates never depend on parameter order.

Training log lines have the fixed field order::

    epoch=<int>\tlr=<float>\tloss=<float>\ttrain_acc=<float>

with floats written by ``repr`` so they read back exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import data as dt
from . import model as md
from .layers import softmax


def cross_entropy(logits, label):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``.

    ``logits`` may be ``(C,)`` with an int label, or ``(B, C)`` with ``B``
    labels; the batch loss and gradient are means over the batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(label))
    C = z.shape[-1]
    if y.shape != (z.shape[0],) or np.any(y < 0) or np.any(y >= C):
        raise ValueError(f"labels {label!r} out of range for {C} classes")
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(len(y))
    loss = np.mean(lse - shifted[rows, y])
    grad = softmax(z)
    grad[rows, y] -= 1.0
    grad /= len(y)
    return float(loss), grad[0] if single else grad


# -- optimizers -----------------------------------------------------------

@dataclass
class OptimState:
    kind: str  # "adam" | "radam" | "ranger"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lookahead_k: int = 6
    lookahead_alpha: float = 0.5
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    slow_weights: dict | None = None
    last_branch: str | None = None  # RAdam: "rectified" or "momentum"


def init_state(params: dict, kind: str = "adam", **hyper) -> OptimState:
    if kind not in ("adam", "radam", "ranger"):
        raise ValueError(f"unknown optimizer {kind!r}")
    st = OptimState(kind, **hyper)
    st.first_moment = {k: np.zeros_like(v) for k, v in params.items()}
    st.second_moment = {k: np.zeros_like(v) for k, v in params.items()}
    if kind == "ranger":
        st.slow_weights = {k: v.copy() for k, v in params.items()}
    return st


def _moments(state, name, g):
    m = state.first_moment[name]
    v = state.second_moment[name]
    m *= state.beta1
    m += (1 - state.beta1) * g
    v *= state.beta2
    v += (1 - state.beta2) * g * g
    return m, v


def adam_step(state: OptimState, params: dict, grads: dict, lr: float | None = None) -> OptimState:
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1 - state.beta1**t
    bc2 = 1 - state.beta2**t
    for name, p in params.items():
        m, v = _moments(state, name, grads[name])
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def radam_step(state: OptimState, params: dict, grads: dict, lr: float | None = None) -> OptimState:
    """Rectified Adam; plain bias-corrected momentum while the variance
    rectification is undefined (rho_t <= 5, the first few steps)."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    rho_inf = 2 / (1 - b2) - 1
    b2t = b2**t
    rho_t = rho_inf - 2 * t * b2t / (1 - b2t)
    if rho_t > 5:
        state.last_branch = "rectified"
        rect = math.sqrt(
            (1 - b2t) * (rho_t - 4) / (rho_inf - 4) * (rho_t - 2) / rho_t * rho_inf / (rho_inf - 2)
        )
        step_size = lr * rect / (1 - b1**t)
    else:
        state.last_branch = "momentum"
        step_size = lr / (1 - b1**t)
    for name, p in params.items():
        m, v = _moments(state, name, grads[name])
        if state.last_branch == "rectified":
            p -= step_size * m / (np.sqrt(v) + state.eps)
        else:
            p -= step_size * m
    return state


def ranger_step(state: OptimState, params: dict, grads: dict, lr: float | None = None) -> OptimState:
    """RAdam inner step wrapped in Lookahead."""
    if state.slow_weights is None:
        raise ValueError("ranger_step needs lookahead slow weights; use init_state(kind='ranger')")
    radam_step(state, params, grads, lr)
    if state.step % state.lookahead_k == 0:
        for name, p in params.items():
            slow = state.slow_weights[name]
            slow += state.lookahead_alpha * (p - slow)
            p[...] = slow
    return state


STEPS = {"adam": adam_step, "radam": radam_step, "ranger": ranger_step}


def optimizer_step(state: OptimState, params: dict, grads: dict, lr: float | None = None) -> OptimState:
    return STEPS[state.kind](state, params, grads, lr)


# -- schedules ------------------------------------------------------------

@dataclass(frozen=True)
class LrSchedule:
    kind: str  # "flat_then_cosine" | "cosine" | "constant"
    base_lr: float
    final_lr: float
    total_epochs: int
    switch_epoch: int = 0

    def __post_init__(self):
        if self.kind not in ("flat_then_cosine", "cosine", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.total_epochs < 1 or self.switch_epoch < 0:
            raise ValueError("need total_epochs >= 1 and switch_epoch >= 0")
        if self.final_lr > self.base_lr:
            raise ValueError("final_lr must not exceed base_lr")


def _cosine(base, final, pos, span):
    if span <= 0:
        return final
    return final + (base - final) * 0.5 * (1 + math.cos(math.pi * pos / span))


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate for a 0-based epoch.

    ``flat_then_cosine`` holds ``base_lr`` before ``switch_epoch`` and then
    anneals so the last epoch sits exactly at ``final_lr`` (a switch at or
    past the end means flat throughout); ``cosine`` anneals from the first
    to the last epoch. Epoch 0 is always ``base_lr``, also for one-epoch runs.
    """
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    s = schedule
    if s.kind == "constant" or epoch == 0:
        return s.base_lr
    if s.kind == "cosine":
        return _cosine(s.base_lr, s.final_lr, epoch, s.total_epochs - 1)
    if epoch < s.switch_epoch:
        return s.base_lr
    return _cosine(s.base_lr, s.final_lr, epoch - s.switch_epoch, s.total_epochs - 1 - s.switch_epoch)


def cosine_schedule(base_lr: float, total_epochs: int, factor: float = 0.1) -> LrSchedule:
    return LrSchedule("cosine", base_lr, base_lr * factor, total_epochs)


# -- training ---------------------------------------------------------------

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    lr: float
    loss: float
    train_acc: float

    def format(self) -> str:
        return f"epoch={self.epoch}\tlr={self.lr!r}\tloss={self.loss!r}\ttrain_acc={self.train_acc!r}"

    @classmethod
    def parse(cls, line: str) -> "EpochLog":
        kv = dict(part.split("=", 1) for part in line.strip().split("\t"))
        return cls(int(kv["epoch"]), float(kv["lr"]), float(kv["loss"]), float(kv["train_acc"]))


def predict_arrays(params, cfg, X, chunk: int = 256) -> np.ndarray:
    out = [md.predict(params, cfg, X[i : i + chunk]) for i in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def train(
    params: md.ModelParams,
    cfg: md.ModelConfig,
    X: np.ndarray,
    y: np.ndarray,
    schedule: LrSchedule,
    optimizer: str = "adam",
    batch_size: int = 32,
    seed: int = 0,
    epochs: int | None = None,
    on_epoch=None,
):
    """Train ``params`` in place on ``X`` ``(N, T, K, 3)`` and labels ``y``.

    Batches are class-balanced; the batch gradient is the mean over its
    samples. ``train_acc`` is measured on all of ``X`` with the weights at the
    end of the epoch. Returns ``(params, [EpochLog, ...])``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise dt.DataError("empty training set")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} labels")
    missing = sorted(set(range(cfg.n_classes)) - set(y.tolist()))
    if missing:
        raise dt.DataError(f"classes absent from the training set: {missing}")
    epochs = schedule.total_epochs if epochs is None else epochs
    flat = params.named_arrays()
    state = init_state(flat, optimizer, lr=schedule.base_lr)
    batches = dt.balanced_batches(y, batch_size, seed, cfg.n_classes)
    n_batches = dt.batches_per_epoch(len(X), batch_size)
    history = []
    for epoch in range(epochs):
        lr = lr_at(schedule, epoch)
        losses = []
        for _ in range(n_batches):
            idx = next(batches)
            logits, cache = md.forward_with_cache(params, cfg, X[idx])
            loss, g_logits = cross_entropy(logits, y[idx])
            grads = md.backward_from_cache(params, cfg, cache, g_logits).named_arrays()
            optimizer_step(state, flat, grads, lr)
            losses.append(loss)
        acc = float(np.mean(predict_arrays(params, cfg, X) == y))
        entry = EpochLog(epoch + 1, lr, float(np.mean(losses)), acc)
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return params, history
