"""The spatio-temporal MLP: projection, mixing blocks, pooling, classifier.

Feature matrices are ``(T, S)`` with time steps as rows. All functions also
accept a leading batch axis; parameter gradients are then summed over it.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import layers as ly
from . import tensor as tn
from .layers import LayerNormParams, LinearParams, SEParams
from .tensor import ShapeError

VARIANTS = ("full", "spatial_only", "temporal_only", "two_stream")
SE_MODES = ("shared", "separate", "off")
LN_AXES = ("operand", "features")
SE_SEMANTICS = ("scale", "additive")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_joints: int
    width: int
    seq_len: int
    spatial_hidden: int
    temporal_hidden: int
    n_classes: int
    variant: str = "full"
    se_mode: str = "shared"
    ln_axis: str = "operand"
    se_semantics: str = "scale"
    ln_epsilon: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and (not isinstance(v, (int, np.integer)) or v < 1):
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")
        for name, allowed in (
            ("variant", VARIANTS),
            ("se_mode", SE_MODES),
            ("ln_axis", LN_AXES),
            ("se_semantics", SE_SEMANTICS),
        ):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.ln_epsilon <= 0:
            raise ValueError("ln_epsilon must be positive")

    @property
    def pose_size(self) -> int:
        return 3 * self.n_joints

    @property
    def se_hidden(self) -> int:
        return ly.se_hidden_width(self.seq_len)

    @property
    def spatial_norm_dim(self) -> int:
        return self.seq_len if self.ln_axis == "operand" else self.width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**self.to_dict(), **changes})


@dataclass
class MixingBlockParams:
    spatial_norm: LayerNormParams
    spatial_in: LinearParams  # S -> D_S
    spatial_out: LinearParams  # D_S -> S
    temporal_norm: LayerNormParams
    temporal_in: LinearParams  # T -> D_T
    temporal_out: LinearParams  # D_T -> T
    se_spatial: SEParams | None = None
    se_temporal: SEParams | None = None  # same object as se_spatial when shared

    @property
    def se_shared(self) -> bool:
        return self.se_spatial is not None and self.se_spatial is self.se_temporal


@dataclass
class ModelParams:
    projection: LinearParams
    blocks: list
    classifier: LinearParams

    def named_arrays(self) -> dict:
        """Flat ``name -> array`` view; shared SE storage appears once."""
        out = {}

        def put(prefix, obj):
            for k, v in obj.arrays().items():
                out[f"{prefix}.{k}"] = v

        put("projection", self.projection)
        for i, b in enumerate(self.blocks):
            p = f"blocks.{i}"
            for name in ("spatial_norm", "spatial_in", "spatial_out", "temporal_norm", "temporal_in", "temporal_out"):
                put(f"{p}.{name}", getattr(b, name))
            if b.se_shared:
                put(f"{p}.se", b.se_spatial)
            else:
                if b.se_spatial is not None:
                    put(f"{p}.se_spatial", b.se_spatial)
                if b.se_temporal is not None:
                    put(f"{p}.se_temporal", b.se_temporal)
        put("classifier", self.classifier)
        return out

    def count(self) -> int:
        return sum(a.size for a in self.named_arrays().values())


def _zeros_linear(p):
    return LinearParams(np.zeros_like(p.weight), np.zeros_like(p.bias))


def _zeros_se(p):
    return None if p is None else SEParams(_zeros_linear(p.reduce), _zeros_linear(p.expand))


def _zeros_block(b: MixingBlockParams) -> MixingBlockParams:
    se_s = _zeros_se(b.se_spatial)
    se_t = se_s if b.se_shared else _zeros_se(b.se_temporal)
    return MixingBlockParams(
        LayerNormParams(np.zeros_like(b.spatial_norm.gain), np.zeros_like(b.spatial_norm.bias), b.spatial_norm.epsilon),
        _zeros_linear(b.spatial_in),
        _zeros_linear(b.spatial_out),
        LayerNormParams(np.zeros_like(b.temporal_norm.gain), np.zeros_like(b.temporal_norm.bias), b.temporal_norm.epsilon),
        _zeros_linear(b.temporal_in),
        _zeros_linear(b.temporal_out),
        se_s,
        se_t,
    )


def zeros_like(params: ModelParams) -> ModelParams:
    """Gradient container mirroring ``params``, including SE aliasing."""
    return ModelParams(
        _zeros_linear(params.projection),
        [_zeros_block(b) for b in params.blocks],
        _zeros_linear(params.classifier),
    )


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form number of learnable scalars for ``cfg``."""
    S, T, k = cfg.width, cfg.seq_len, cfg.pose_size
    th = cfg.se_hidden
    se = (T * th + th) + (th * T + T)
    n_se = {"shared": 1, "separate": 2, "off": 0}[cfg.se_mode]
    block = (
        2 * cfg.spatial_norm_dim
        + (S * cfg.spatial_hidden + cfg.spatial_hidden)
        + (cfg.spatial_hidden * S + S)
        + 2 * S
        + (T * cfg.temporal_hidden + cfg.temporal_hidden)
        + (cfg.temporal_hidden * T + T)
        + n_se * se
    )
    return (k * S + S) + cfg.n_layers * block + (S * cfg.n_classes + cfg.n_classes)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-sqrt(1/fan_in)) weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(seed)
    S, T = cfg.width, cfg.seq_len
    projection = ly.init_linear(rng, cfg.pose_size, S)
    blocks = []
    for _ in range(cfg.n_layers):
        s_in = ly.init_linear(rng, S, cfg.spatial_hidden)
        s_out = ly.init_linear(rng, cfg.spatial_hidden, S)
        t_in = ly.init_linear(rng, T, cfg.temporal_hidden)
        t_out = ly.init_linear(rng, cfg.temporal_hidden, T)
        se_s = se_t = None
        if cfg.se_mode != "off":
            se_s = ly.init_se(rng, T)
            # separate blocks start as copies so shared/separate agree at step 0
            se_t = se_s if cfg.se_mode == "shared" else copy.deepcopy(se_s)
        blocks.append(
            MixingBlockParams(
                ly.init_layer_norm(cfg.spatial_norm_dim, cfg.ln_epsilon),
                s_in,
                s_out,
                ly.init_layer_norm(S, cfg.ln_epsilon),
                t_in,
                t_out,
                se_s,
                se_t,
            )
        )
    classifier = ly.init_linear(rng, S, cfg.n_classes)
    return ModelParams(projection, blocks, classifier)


# -- input ---------------------------------------------------------------

def flatten_sequence(seq, cfg: ModelConfig | None = None) -> np.ndarray:
    """``(T, K, 3)`` frames -> ``(T, 3K)`` rows ``x1,y1,z1,...,xK,yK,zK``."""
    frames = np.asarray(getattr(seq, "frames", seq), dtype=np.float64)
    if frames.ndim < 3 or frames.shape[-1] != 3:
        raise ShapeError(f"expected frames shaped (..., T, K, 3), got {frames.shape}")
    if cfg is not None:
        if frames.shape[-3] != cfg.seq_len:
            raise ShapeError(f"sequence has {frames.shape[-3]} frames, model expects {cfg.seq_len}")
        if frames.shape[-2] != cfg.n_joints:
            raise ShapeError(f"sequence has {frames.shape[-2]} joints, model expects {cfg.n_joints}")
    return frames.reshape(*frames.shape[:-2], frames.shape[-2] * 3)


def unflatten_sequence(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] % 3:
        raise ShapeError(f"row length {x.shape[-1]} is not a multiple of 3")
    return x.reshape(*x.shape[:-1], x.shape[-1] // 3, 3)


def project_input(p: LinearParams, x: np.ndarray) -> np.ndarray:
    """Per-time-step map k -> S (a kernel-size-1 convolution over time)."""
    return ly.linear(p, x)


# -- mixing units ----------------------------------------------------------

def _se_apply(se, semantics, a):
    if se is None:
        return a
    if semantics == "additive":
        return ly.se_columns(se, a)
    return ly.se_block(se, a)[0]


def _se_grad(se, semantics, a, grad, gse):
    if se is None:
        return grad
    if semantics == "additive":
        ga, g = ly.se_columns_backward(se, a, grad)
    else:
        ga, g = ly.se_block_backward(se, a, grad)
    _acc_se(gse, g)
    return ga


def _check_features(x, cfg):
    if x.shape[-2:] != (cfg.seq_len, cfg.width):
        raise ShapeError(f"feature matrix {x.shape[-2:]} does not match (T, S) = {(cfg.seq_len, cfg.width)}")


def _spatial_forward(b: MixingBlockParams, cfg: ModelConfig, x):
    _check_features(x, cfg)
    if cfg.ln_axis == "operand":
        h = tn.transpose(ly.layer_norm(b.spatial_norm, tn.transpose(x)))
    else:
        h = ly.layer_norm(b.spatial_norm, x)
    z = ly.linear(b.spatial_in, h)
    g = ly.gelu(z)
    a = ly.linear(b.spatial_out, g)
    u = x + _se_apply(b.se_spatial, cfg.se_semantics, a)
    return u, (x, h, z, g, a)


def _spatial_backward(b, gb, cfg, cache, grad):
    x, h, z, g, a = cache
    ga = _se_grad(b.se_spatial, cfg.se_semantics, a, grad, gb.se_spatial)
    gg, gl = ly.linear_backward(b.spatial_out, g, ga)
    _acc_linear(gb.spatial_out, gl)
    gh, gl = ly.linear_backward(b.spatial_in, h, ly.gelu_backward(z, gg))
    _acc_linear(gb.spatial_in, gl)
    if cfg.ln_axis == "operand":
        gxt, gn = ly.layer_norm_backward(b.spatial_norm, tn.transpose(x), tn.transpose_backward(gh))
        gx = tn.transpose_backward(gxt)
    else:
        gx, gn = ly.layer_norm_backward(b.spatial_norm, x, gh)
    _acc_norm(gb.spatial_norm, gn)
    return grad + gx


def _temporal_forward(b: MixingBlockParams, cfg: ModelConfig, u):
    _check_features(u, cfg)
    h = ly.layer_norm(b.temporal_norm, u)
    ht = tn.transpose(h)
    z = ly.linear(b.temporal_in, ht)
    g = ly.gelu(z)
    bt = ly.linear(b.temporal_out, g)
    mixed = tn.transpose(bt)
    v = u + _se_apply(b.se_temporal, cfg.se_semantics, mixed)
    return v, (u, ht, z, g, mixed)


def _temporal_backward(b, gb, cfg, cache, grad):
    u, ht, z, g, mixed = cache
    gm = _se_grad(b.se_temporal, cfg.se_semantics, mixed, grad, gb.se_temporal)
    gg, gl = ly.linear_backward(b.temporal_out, g, tn.transpose_backward(gm))
    _acc_linear(gb.temporal_out, gl)
    ght, gl = ly.linear_backward(b.temporal_in, ht, ly.gelu_backward(z, gg))
    _acc_linear(gb.temporal_in, gl)
    gu, gn = ly.layer_norm_backward(b.temporal_norm, u, tn.transpose_backward(ght))
    _acc_norm(gb.temporal_norm, gn)
    return grad + gu


def spatial_mixing(block: MixingBlockParams, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Mix across the S features of every time step, with skip connection."""
    return _spatial_forward(block, cfg, x)[0]


def temporal_mixing(block: MixingBlockParams, cfg: ModelConfig, u: np.ndarray) -> np.ndarray:
    """Mix across the T time steps of every feature column, with skip connection."""
    return _temporal_forward(block, cfg, u)[0]


def spatial_mixing_backward(block, cfg, x, grad):
    """Returns ``(grad_x, block_grads)``."""
    gb = _zeros_block(block)
    _, cache = _spatial_forward(block, cfg, x)
    return _spatial_backward(block, gb, cfg, cache, grad), gb


def temporal_mixing_backward(block, cfg, u, grad):
    gb = _zeros_block(block)
    _, cache = _temporal_forward(block, cfg, u)
    return _temporal_backward(block, gb, cfg, cache, grad), gb


def _acc_linear(dst: LinearParams, src: LinearParams):
    dst.weight += src.weight
    dst.bias += src.bias


def _acc_norm(dst: LayerNormParams, src: LayerNormParams):
    dst.gain += src.gain
    dst.bias += src.bias


def _acc_se(dst: SEParams, src: SEParams):
    _acc_linear(dst.reduce, src.reduce)
    _acc_linear(dst.expand, src.expand)


# -- full model ----------------------------------------------------------

def _stream_plan(cfg: ModelConfig):
    """Lists of (block index, unit) per stream."""
    idx = range(cfg.n_layers)
    if cfg.variant == "full":
        return [[(i, u) for i in idx for u in ("spatial", "temporal")]]
    if cfg.variant == "spatial_only":
        return [[(i, "spatial") for i in idx]]
    if cfg.variant == "temporal_only":
        return [[(i, "temporal") for i in idx]]
    return [[(i, "spatial") for i in idx], [(i, "temporal") for i in idx]]


def _as_input(cfg, x):
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    if x.ndim >= 3 and x.shape[-1] == 3 and x.shape[-2] == cfg.n_joints and x.shape[-3] == cfg.seq_len:
        x = flatten_sequence(x, cfg)
    if x.ndim < 2 or x.shape[-2:] != (cfg.seq_len, cfg.pose_size):
        raise ShapeError(
            f"input {x.shape} does not match (T, 3K) = {(cfg.seq_len, cfg.pose_size)}"
            f" for T={cfg.seq_len}, K={cfg.n_joints}"
        )
    return x


def forward_with_cache(params: ModelParams, cfg: ModelConfig, x):
    x = _as_input(cfg, x)
    x0 = project_input(params.projection, x)
    pooled_sum = 0.0
    stream_caches = []
    for plan in _stream_plan(cfg):
        h = x0
        caches = []
        for i, unit in plan:
            step = _spatial_forward if unit == "spatial" else _temporal_forward
            h, c = step(params.blocks[i], cfg, h)
            caches.append(c)
        stream_caches.append((plan, caches, h.shape))
        pooled_sum = pooled_sum + tn.mean_over_rows(h)
    pooled = pooled_sum / len(stream_caches)
    logits = ly.linear(params.classifier, pooled)
    return logits, (x, x0, pooled, stream_caches)


def forward(params: ModelParams, cfg: ModelConfig, seq) -> np.ndarray:
    """Class logits for one sequence ``(T, K, 3)`` / ``(T, 3K)``, or a batch of them."""
    return forward_with_cache(params, cfg, seq)[0]


def backward_from_cache(params: ModelParams, cfg: ModelConfig, cache, grad_logits) -> ModelParams:
    x, x0, pooled, stream_caches = cache
    grads = zeros_like(params)
    gpooled, gl = ly.linear_backward(params.classifier, pooled, np.asarray(grad_logits, dtype=np.float64))
    _acc_linear(grads.classifier, gl)
    gpooled = gpooled / len(stream_caches)
    gx0 = np.zeros_like(x0)
    for plan, caches, shape in stream_caches:
        g = tn.mean_over_rows_backward(shape, gpooled)
        for (i, unit), c in zip(reversed(plan), reversed(caches)):
            step = _spatial_backward if unit == "spatial" else _temporal_backward
            g = step(params.blocks[i], grads.blocks[i], cfg, c, g)
        gx0 += g
    _, gl = ly.linear_backward(params.projection, x, gx0)
    _acc_linear(grads.projection, gl)
    return grads


def backward(params: ModelParams, cfg: ModelConfig, seq, grad_logits) -> ModelParams:
    """Parameter gradients of ``sum(grad_logits * logits)``; summed over a batch."""
    _, cache = forward_with_cache(params, cfg, seq)
    return backward_from_cache(params, cfg, cache, grad_logits)


def predict(params: ModelParams, cfg: ModelConfig, x) -> np.ndarray:
    return np.argmax(forward(params, cfg, x), axis=-1)
