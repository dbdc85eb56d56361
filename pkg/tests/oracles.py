"""Independent reference computations used by the tests.

Nothing here imports the layer or model code: the forward oracle is written
with explicit loops over scalars so it shares no code path with the library.
"""

import math

import numpy as np

GC = math.sqrt(2.0 / math.pi)


def central_diff(f, x, h=1e-5, order=2):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place, restored).

    ``order=4`` uses the five-point stencil, which tolerates a larger ``h`` and
    so loses less to cancellation when the gradient itself is small.
    """
    taps = {2: ((1, 1 / 2),), 4: ((1, 2 / 3), (2, -1 / 12))}[order]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        acc = 0.0
        for k, c in taps:
            x[i] = old + k * h
            fp = f()
            x[i] = old - k * h
            acc += c * (fp - f())
        x[i] = old
        g[i] = acc / h
    return g


def rel_err(a, b, floor=1e-8):
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den)) if a.size else 0.0


# -- scalar straight-line forward ---------------------------------------------

def _gelu(v):
    return 0.5 * v * (1.0 + math.tanh(GC * (v + 0.044715 * v * v * v)))


def _lin(W, b, vec):
    return [sum(W[o][i] * vec[i] for i in range(len(vec))) + b[o] for o in range(len(W))]


def _ln(vec, gain, bias, eps):
    n = len(vec)
    mu = sum(vec) / n
    var = sum((v - mu) ** 2 for v in vec) / n
    s = math.sqrt(var + eps)
    return [(vec[i] - mu) / s * gain[i] + bias[i] for i in range(n)]


def _softmax(vec):
    m = max(vec)
    e = [math.exp(v - m) for v in vec]
    z = sum(e)
    return [v / z for v in e]


def _se_weights(se, A):
    T, S = len(A), len(A[0])
    pooled = [sum(A[t]) / S for t in range(T)]
    hid = [max(v, 0.0) for v in _lin(se["rw"], se["rb"], pooled)]
    return _softmax(_lin(se["ew"], se["eb"], hid))


def _se_add(X, A, se, semantics):
    T, S = len(X), len(X[0])
    if se is None:
        return [[X[t][s] + A[t][s] for s in range(S)] for t in range(T)]
    if semantics == "scale":
        w = _se_weights(se, A)
        return [[X[t][s] + w[t] * A[t][s] for s in range(S)] for t in range(T)]
    out = [row[:] for row in X]
    for s in range(S):
        col = [A[t][s] for t in range(T)]
        hid = [max(v, 0.0) for v in _lin(se["rw"], se["rb"], col)]
        z = _softmax(_lin(se["ew"], se["eb"], hid))
        for t in range(T):
            out[t][s] += z[t]
    return out


def _spatial(X, blk, cfg):
    T, S = len(X), len(X[0])
    eps = cfg["eps"]
    if cfg["ln_axis"] == "operand":
        cols = [_ln([X[t][s] for t in range(T)], blk["sn_g"], blk["sn_b"], eps) for s in range(S)]
        H = [[cols[s][t] for s in range(S)] for t in range(T)]
    else:
        H = [_ln(X[t], blk["sn_g"], blk["sn_b"], eps) for t in range(T)]
    A = []
    for t in range(T):
        z = [_gelu(v) for v in _lin(blk["si_w"], blk["si_b"], H[t])]
        A.append(_lin(blk["so_w"], blk["so_b"], z))
    return _se_add(X, A, blk["se_s"], cfg["se_semantics"])


def _temporal(U, blk, cfg):
    T, S = len(U), len(U[0])
    H = [_ln(U[t], blk["tn_g"], blk["tn_b"], cfg["eps"]) for t in range(T)]
    B = [[0.0] * S for _ in range(T)]
    for s in range(S):
        col = [H[t][s] for t in range(T)]
        z = [_gelu(v) for v in _lin(blk["ti_w"], blk["ti_b"], col)]
        out = _lin(blk["to_w"], blk["to_b"], z)
        for t in range(T):
            B[t][s] = out[t]
    return _se_add(U, B, blk["se_t"], cfg["se_semantics"])


def straight_line_forward(raw, frames):
    """Logits from plain nested lists.

    ``raw`` is a dict of python lists (see :func:`export_raw`); ``frames`` is
    a nested ``[T][K][3]`` list.
    """
    cfg = raw["cfg"]
    rows = [[c for joint in frame for c in joint] for frame in frames]
    X0 = [_lin(raw["proj_w"], raw["proj_b"], r) for r in rows]
    T, S = len(X0), len(X0[0])
    if cfg["variant"] == "full":
        plans = [[(i, u) for i in range(cfg["L"]) for u in ("s", "t")]]
    elif cfg["variant"] == "spatial_only":
        plans = [[(i, "s") for i in range(cfg["L"])]]
    elif cfg["variant"] == "temporal_only":
        plans = [[(i, "t") for i in range(cfg["L"])]]
    else:
        plans = [[(i, "s") for i in range(cfg["L"])], [(i, "t") for i in range(cfg["L"])]]
    pooled = [0.0] * S
    for plan in plans:
        X = [r[:] for r in X0]
        for i, u in plan:
            X = _spatial(X, raw["blocks"][i], cfg) if u == "s" else _temporal(X, raw["blocks"][i], cfg)
        for s in range(S):
            pooled[s] += sum(X[t][s] for t in range(T)) / T / len(plans)
    return _lin(raw["cls_w"], raw["cls_b"], pooled)


def export_raw(params, cfg):
    """Copy model parameters into plain python lists for the oracle."""

    def se(p):
        if p is None:
            return None
        return {
            "rw": p.reduce.weight.tolist(), "rb": p.reduce.bias.tolist(),
            "ew": p.expand.weight.tolist(), "eb": p.expand.bias.tolist(),
        }

    blocks = []
    for b in params.blocks:
        blocks.append({
            "sn_g": b.spatial_norm.gain.tolist(), "sn_b": b.spatial_norm.bias.tolist(),
            "si_w": b.spatial_in.weight.tolist(), "si_b": b.spatial_in.bias.tolist(),
            "so_w": b.spatial_out.weight.tolist(), "so_b": b.spatial_out.bias.tolist(),
            "tn_g": b.temporal_norm.gain.tolist(), "tn_b": b.temporal_norm.bias.tolist(),
            "ti_w": b.temporal_in.weight.tolist(), "ti_b": b.temporal_in.bias.tolist(),
            "to_w": b.temporal_out.weight.tolist(), "to_b": b.temporal_out.bias.tolist(),
            "se_s": se(b.se_spatial), "se_t": se(b.se_temporal),
        })
    return {
        "cfg": {
            "L": cfg.n_layers, "variant": cfg.variant, "ln_axis": cfg.ln_axis,
            "se_semantics": cfg.se_semantics, "eps": cfg.ln_epsilon,
        },
        "proj_w": params.projection.weight.tolist(), "proj_b": params.projection.bias.tolist(),
        "blocks": blocks,
        "cls_w": params.classifier.weight.tolist(), "cls_b": params.classifier.bias.tolist(),
    }


def randomize(params, seed, scale=0.5):
    """Perturb every array (biases and norm gains included) so no term is trivially zero."""
    rng = np.random.default_rng(seed)
    for a in params.named_arrays().values():
        a += scale * rng.normal(size=a.shape)
    return params


# -- brute-force metrics ---------------------------------------------------------

def brute_metrics(true, pred, C):
    """Per-class set computations, no confusion matrix."""
    true, pred = list(true), list(pred)
    idx = range(len(true))
    jac, f1, rec = [], [], []
    for c in range(C):
        T = {i for i in idx if true[i] == c}
        P = {i for i in idx if pred[i] == c}
        inter, union = len(T & P), len(T | P)
        if union:
            jac.append(inter / union)
            f1.append(2 * inter / (len(T) + len(P)))
        if T:
            rec.append(inter / len(T))
    acc = sum(t == p for t, p in zip(true, pred)) / len(true)
    return {
        "accuracy": acc,
        "macro_jaccard": sum(jac) / len(jac),
        "macro_f1": sum(f1) / len(f1),
        "mean_per_class_accuracy": sum(rec) / len(rec),
    }


def spatial_unit(X, raw, i):
    return _spatial(X, raw["blocks"][i], raw["cfg"])


def temporal_unit(U, raw, i):
    return _temporal(U, raw["blocks"][i], raw["cfg"])


def norm_rel_err(a, b, floor=1e-6):
    """||a - b|| / max(||a||, ||b||, floor): the per-array relative error used
    for whole-model gradient checks.

    The floor matters for arrays whose true gradient is exactly zero (an SE
    block with every ReLU off, or additive SE columns in the last unit, which
    average to 1/T under pooling); there only difference noise of order 1e-11
    remains.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def model_gradient_errors(md, params, cfg, x, seed=0):
    """Per named parameter array, relative error of the analytic gradient of
    ``sum(up * logits)`` against central differences.

    Two estimates are taken: a narrow second-order one and a wide fourth-order
    one. The wide step can straddle a ReLU kink in the SE block; the narrow
    one loses digits to cancellation when the gradient is small. The smaller
    of the two errors is reported, so a wrong gradient still fails both.
    """
    up = np.random.default_rng(seed).normal(size=cfg.n_classes)
    grads = md.backward(params, cfg, x, up).named_arrays()
    f = lambda: float(md.forward(params, cfg, x) @ up)
    out = {}
    for name, arr in params.named_arrays().items():
        narrow = norm_rel_err(grads[name], central_diff(f, arr))
        wide = norm_rel_err(grads[name], central_diff(f, arr, h=1e-3, order=4))
        out[name] = min(narrow, wide)
    return out
