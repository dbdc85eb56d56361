#!/usr/bin/env python3
# Training on synthetic gestures and comparing ablations.
#
# Each class wiggles one joint along one axis at its own frequency. Subject s4
# is held out, so the test set only shares the gesture, not the noise draw.

import time

import numpy as np

from stmlp import config as cf
from stmlp import data as dt
from stmlp import metrics as mt
from stmlp import model as md
from stmlp import optim as op

run = cf.preset("tiny")
cfg = run.model
print(cfg)
print("parameters:", md.parameter_count(cfg))

seqs = dt.synth_gestures(4, 400, cfg.n_joints, cfg.seq_len, noise=0.05, seed=0)
split = dt.split_by(seqs, "subject", ["s4"])
X, y = dt.to_arrays(split.train, cfg.seq_len)
Xt, yt = dt.to_arrays(split.test, cfg.seq_len)
print("train", X.shape, "test", Xt.shape, "class counts", np.bincount(y))

# what a single training example looks like: one coordinate carries the class
c0 = X[y == 0][0]
print("per-coordinate std over time, class 0:\n", np.round(c0.std(axis=0), 2))


def fit(variant="full", se_mode="shared", optimizer="adam", lr=1e-3, epochs=30):
    m = cfg.replace(variant=variant, se_mode=se_mode)
    params = md.init_params(m, seed=0)
    sched = op.LrSchedule(run.schedule, lr, lr / 10, epochs, run.switch_epoch)
    t0 = time.perf_counter()
    _, log = op.train(params, m, X, y, sched, optimizer, run.batch_size, seed=0)
    cm = mt.ConfusionMatrix.from_labels(yt, op.predict_arrays(params, m, Xt), m.n_classes)
    return log, cm, time.perf_counter() - t0


log, cm, secs = fit()
for e in log[::5]:
    print(e.format())
print(mt.report(cm))
print(f"{secs:.1f} s")

# Ranger wants a bigger step here: Lookahead pulls halfway back every 6 steps
for label, kw in [
    ("ranger lr 1e-2", dict(optimizer="ranger", lr=1e-2)),
    ("spatial only", dict(variant="spatial_only")),
    ("temporal only", dict(variant="temporal_only")),
    ("two stream", dict(variant="two_stream")),
    ("no SE", dict(se_mode="off")),
    ("separate SE", dict(se_mode="separate")),
]:
    log, cm, secs = fit(**kw)
    print(f"{label:16s} test acc {mt.accuracy(cm):.3f}  final loss {log[-1].loss:.4f}  {secs:.1f} s")
