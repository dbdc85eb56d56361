"""Allocation-free forward pass for latency-critical, single-window inference.

Weights are re-laid-out once (contiguous, in the requested dtype) and every
intermediate lives in a preallocated buffer. Results match :func:`stmlp.model.forward`
to rounding.
"""

from __future__ import annotations

import time
from collections import deque

import numpy as np

from . import model as md
from .layers import GELU_A, GELU_C


def _c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


class _Unit:
    __slots__ = ("kind", "gain", "bias", "w_in", "b_in", "w_out", "b_out", "se")


class InferenceEngine:
    def __init__(self, params: md.ModelParams, cfg: md.ModelConfig, dtype=np.float64):
        if cfg.se_semantics != "scale":
            raise NotImplementedError("the inference engine implements the row-scaling SE form only")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        dt = self.dtype
        T, S = cfg.seq_len, cfg.width
        self.tanh_form = dt == np.float32
        half = 0.5 if self.tanh_form else 1.0
        self.eps = dt.type(cfg.ln_epsilon)
        self.proj_w = _c(params.projection.weight.T, dt)
        self.proj_b = _c(params.projection.bias, dt)
        self.cls_w = _c(params.classifier.weight.T, dt)
        self.cls_b = _c(params.classifier.bias, dt)

        se_cache = {}

        def se_of(se):
            if se is None:
                return None
            key = id(se)
            if key not in se_cache:
                se_cache[key] = (
                    _c(se.reduce.weight, dt), _c(se.reduce.bias, dt),
                    _c(se.expand.weight, dt), _c(se.expand.bias, dt),
                )
            return se_cache[key]

        self.streams = []
        for plan in md._stream_plan(cfg):
            units = []
            for i, kind in plan:
                b = params.blocks[i]
                u = _Unit()
                u.kind = kind
                if kind == "spatial":
                    u.gain, u.bias = _c(b.spatial_norm.gain, dt), _c(b.spatial_norm.bias, dt)
                    if cfg.ln_axis == "operand":
                        u.gain, u.bias = u.gain[:, None].copy(), u.bias[:, None].copy()
                    u.w_in, u.b_in = _c(b.spatial_in.weight.T, dt), _c(b.spatial_in.bias, dt)
                    u.w_out, u.b_out = _c(half * b.spatial_out.weight.T, dt), _c(b.spatial_out.bias, dt)
                    u.se = se_of(b.se_spatial)
                else:
                    u.gain, u.bias = _c(b.temporal_norm.gain, dt), _c(b.temporal_norm.bias, dt)
                    u.w_in, u.b_in = _c(b.temporal_in.weight, dt), _c(b.temporal_in.bias[:, None], dt)
                    u.w_out, u.b_out = _c(half * b.temporal_out.weight, dt), _c(b.temporal_out.bias[:, None], dt)
                    u.se = se_of(b.se_temporal)
                units.append(u)
            self.streams.append(units)

        self.x = np.empty((T, S), dt)
        self.x0 = np.empty((T, S), dt)
        self.h = np.empty((T, S), dt)
        self.mix = np.empty((T, S), dt)
        self.col = np.empty((1, S), dt)
        self.row = np.empty((T, 1), dt)
        self.zs = np.empty((T, cfg.spatial_hidden), dt)
        self.ts = np.empty((T, cfg.spatial_hidden), dt)
        self.zt = np.empty((cfg.temporal_hidden, S), dt)
        self.tt = np.empty((cfg.temporal_hidden, S), dt)
        self.pooled = np.empty(S, dt)
        self.acc = np.empty(S, dt)

    # In place. float64: gelu(z) = z / (1 + exp(-2u)), u = c (z + a z^3).
    # float32: z * (1 + tanh(u)), with the 1/2 folded into the next weight
    # (numpy's float32 tanh is vectorized, its float64 tanh is not).
    def _gelu(self, z, t):
        np.multiply(z, z, out=t)
        if self.tanh_form:
            np.multiply(t, GELU_C * GELU_A, out=t)
            np.add(t, GELU_C, out=t)
            np.multiply(t, z, out=t)
            np.tanh(t, out=t)
            np.multiply(t, z, out=t)
            np.add(z, t, out=z)
        else:
            np.multiply(t, -2.0 * GELU_C * GELU_A, out=t)
            np.add(t, -2.0 * GELU_C, out=t)
            np.multiply(t, z, out=t)
            np.exp(t, out=t)
            np.add(t, 1.0, out=t)
            np.divide(z, t, out=z)

    def _layer_norm_rows(self, x, gain, bias, out):
        # normalize each row over the features
        m = self.row
        np.mean(x, axis=1, keepdims=True, out=m)
        np.subtract(x, m, out=out)
        np.multiply(out, out, out=self.mix)
        np.mean(self.mix, axis=1, keepdims=True, out=m)
        m += self.eps
        np.sqrt(m, out=m)
        np.divide(out, m, out=out)
        out *= gain
        out += bias

    def _layer_norm_cols(self, x, gain, bias, out):
        # normalize each feature column over time
        m = self.col
        np.mean(x, axis=0, keepdims=True, out=m)
        np.subtract(x, m, out=out)
        np.multiply(out, out, out=self.mix)
        np.mean(self.mix, axis=0, keepdims=True, out=m)
        m += self.eps
        np.sqrt(m, out=m)
        np.divide(out, m, out=out)
        out *= gain
        out += bias

    def _se_add(self, x, mixed, se):
        if se is None:
            x += mixed
            return
        w1, b1, w2, b2 = se
        pooled = mixed.mean(axis=1)
        hid = np.maximum(w1 @ pooled + b1, 0)
        logits = w2 @ hid + b2
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        mixed *= w[:, None]
        x += mixed

    def _spatial(self, x, u):
        if self.cfg.ln_axis == "operand":
            self._layer_norm_cols(x, u.gain, u.bias, self.h)
        else:
            self._layer_norm_rows(x, u.gain, u.bias, self.h)
        np.matmul(self.h, u.w_in, out=self.zs)
        self.zs += u.b_in
        self._gelu(self.zs, self.ts)
        np.matmul(self.zs, u.w_out, out=self.mix)
        self.mix += u.b_out
        self._se_add(x, self.mix, u.se)

    def _temporal(self, x, u):
        self._layer_norm_rows(x, u.gain, u.bias, self.h)
        np.matmul(u.w_in, self.h, out=self.zt)
        self.zt += u.b_in
        self._gelu(self.zt, self.tt)
        np.matmul(u.w_out, self.zt, out=self.mix)
        self.mix += u.b_out
        self._se_add(x, self.mix, u.se)

    def __call__(self, window) -> np.ndarray:
        """Logits for one ``(T, K, 3)`` or ``(T, 3K)`` window."""
        w = np.asarray(window, dtype=self.dtype).reshape(self.cfg.seq_len, self.cfg.pose_size)
        with np.errstate(over="ignore"):  # exp(-2u) -> inf is the correct gelu limit
            return self._forward(w)

    def _forward(self, w):
        np.matmul(w, self.proj_w, out=self.x0)
        self.x0 += self.proj_b
        self.acc[:] = 0
        for units in self.streams:
            x = self.x
            x[...] = self.x0
            for u in units:
                if u.kind == "spatial":
                    self._spatial(x, u)
                else:
                    self._temporal(x, u)
            np.mean(x, axis=0, out=self.pooled)
            self.acc += self.pooled
        if len(self.streams) > 1:
            self.acc /= len(self.streams)
        return self.acc @ self.cls_w + self.cls_b

    def predict(self, window) -> int:
        return int(np.argmax(self(window)))


class StreamPredictor:
    """Causal per-frame classifier: keeps the last T frames, left-padding
    with the first frame until T frames have arrived."""

    def __init__(self, engine: InferenceEngine):
        self.engine = engine
        self.frames = deque(maxlen=engine.cfg.seq_len)

    def push(self, frame) -> int:
        frame = np.asarray(frame, dtype=np.float64).reshape(self.engine.cfg.n_joints, 3)
        if not self.frames:
            self.frames.extend([frame] * self.engine.cfg.seq_len)
        else:
            self.frames.append(frame)
        return self.engine.predict(np.stack(self.frames))


def benchmark(engine: InferenceEngine, iterations: int = 1000, warmup: int = 100, seed: int = 0) -> dict:
    """Wall-clock latency of single-window inference, in milliseconds."""
    rng = np.random.default_rng(seed)
    window = rng.normal(size=(engine.cfg.seq_len, engine.cfg.pose_size))
    for _ in range(warmup):
        engine(window)
    times = np.empty(iterations)
    for i in range(iterations):
        t0 = time.perf_counter()
        engine(window)
        times[i] = time.perf_counter() - t0
    times *= 1e3
    return {
        "iterations": iterations,
        "min_ms": float(times.min()),
        "mean_ms": float(times.mean()),
        "p50_ms": float(np.percentile(times, 50)),
        "p99_ms": float(np.percentile(times, 99)),
    }
