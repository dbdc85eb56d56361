#!/usr/bin/env python3
# Checking the hand-written backward passes against finite differences.
# Everything runs on a tiny model so a full sweep takes a few seconds.

import numpy as np

from stmlp import layers as ly
from stmlp import model as md
from stmlp.model import ModelConfig

rng = np.random.default_rng(0)

# a layer norm over rows of a (4, 5) matrix, contracted with a random upstream
# gradient so the whole thing is one scalar we can difference
x = rng.normal(size=(4, 5))
up = rng.normal(size=(4, 5))
ln = ly.init_layer_norm(5)
gx, _ = ly.layer_norm_backward(ln, x, up)

h = 1e-5
num = np.zeros_like(x)
for i in np.ndindex(x.shape):
    xp, xm = x.copy(), x.copy()
    xp[i] += h
    xm[i] -= h
    num[i] = ((ly.layer_norm(ln, xp) - ly.layer_norm(ln, xm)) * up).sum() / (2 * h)
print("layer norm, max |analytic - numeric|:", np.abs(gx - num).max())

# the SE weights are a softmax over time steps, so they always sum to one
se = ly.init_se(rng, 6)
_, w = ly.se_block(se, rng.normal(size=(6, 8)))
print("SE weights:", np.round(w, 4), "sum", w.sum())

# now the whole model: 1 mixing block, 2 joints, 3 frames
cfg = ModelConfig(n_layers=1, n_joints=2, width=8, seq_len=3, spatial_hidden=4, temporal_hidden=5, n_classes=2)
params = md.init_params(cfg, seed=1)
for arr in params.named_arrays().values():
    arr += 0.5 * rng.normal(size=arr.shape)  # biases start at zero; move off that
seq = rng.normal(size=(cfg.seq_len, cfg.n_joints, 3))
up = rng.normal(size=cfg.n_classes)

grads = md.backward(params, cfg, seq, up).named_arrays()
f = lambda: md.forward(params, cfg, seq) @ up

worst = 0.0
for name, arr in params.named_arrays().items():
    num = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        num[i] = (fp - f()) / (2 * h)
        arr[i] = old
    err = np.linalg.norm(grads[name] - num) / max(np.linalg.norm(grads[name]), np.linalg.norm(num), 1e-6)
    worst = max(worst, err)
    print(f"{name:32s} {err:.1e}")
print("worst relative error", worst)
