#!/usr/bin/env python3
# Frame-by-frame prediction and single-window latency.

import numpy as np
from threadpoolctl import threadpool_limits

from stmlp import config as cf
from stmlp import data as dt
from stmlp import inference as inf
from stmlp import model as md
from stmlp import optim as op

run = cf.preset("tiny")
cfg = run.model

# train with full phase jitter: a causal window can start anywhere in the cycle
seqs = dt.synth_gestures(4, 200, cfg.n_joints, cfg.seq_len, noise=0.05, max_jitter=np.pi)
X, y = dt.to_arrays(seqs, cfg.seq_len)
params = md.init_params(cfg, 0)
op.train(params, cfg, X, y, op.LrSchedule("constant", 1e-3, 1e-3, 20, 20), "adam", run.batch_size)

# the stream switches gesture every 48 frames
stream = dt.synth_stream([0, 2, 1, 3], 48, cfg.n_joints, cfg.seq_len, noise=0.05)
pred = inf.StreamPredictor(inf.InferenceEngine(params, cfg))
out = np.array([pred.push(f) for f in stream.frames])
for c in range(4):
    seg = stream.labels == c
    print(f"class {c}: {np.mean(out[seg] == c):.2f} of frames right (includes the warm-up after each switch)")
print("".join(str(v) for v in out))

# latency of one full-size window, single thread
big = cf.preset("tcg").model
engine = inf.InferenceEngine(md.init_params(big, 0), big)
engine32 = inf.InferenceEngine(md.init_params(big, 0), big, np.float32)
with threadpool_limits(limits=1):
    for name, e in (("float64", engine), ("float32", engine32)):
        s = inf.benchmark(e, iterations=200, warmup=20)
        print(f"{name}: mean {s['mean_ms']:.3f} ms  p50 {s['p50_ms']:.3f}  p99 {s['p99_ms']:.3f}")
