"""Decoder-only transformer that maps state-action sequences to state patches.

Each input position carries ``[state * (1 - flag), action, flag]`` where the
flag marks masked context states and the zero placeholders of the prediction
region. A residual block embeds the position, learned positional embeddings
are added, pre-norm causal decoder blocks mix the sequence, and a second
residual block emits two future states per position: position ``i`` predicts
``x[i+1]`` and ``x[i+2]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .rng import substream

PATCH_SIZE = 2


@dataclass(frozen=True)
class ModelConfig:
    d_x: int = 4
    d_u: int = 1
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 128
    context_len: int = 32
    pred_len: int = 32
    patch_size: int = PATCH_SIZE
    mask_fraction: float = 0.1
    embed_hidden: int | None = None  # residual-block width; None means d_model
    stitch: str = "stride2"  # or "refeed"
    normalize: bool = False  # standardise by observed-window statistics; context outputs then see the whole context
    anchor: str = "linear"  # "none", "last" (latest observed state) or "linear" extrapolation
    seed: int = 0

    def __post_init__(self):
        if self.patch_size != PATCH_SIZE:
            raise ValueError("patch_size is fixed at 2")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if min(self.d_x, self.d_model, self.n_layers, self.n_heads, self.d_ff) < 1 or self.d_u < 0:
            raise ValueError("model dimensions must be positive")
        if self.context_len < 1 or self.pred_len < 1:
            raise ValueError("context_len and pred_len must be >= 1")
        if not 0 <= self.mask_fraction < 1:
            raise ValueError("mask_fraction must lie in [0, 1)")
        if self.anchor not in ("none", "last", "linear"):
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if self.stitch not in ("stride2", "refeed"):
            raise ValueError(f"unknown stitch mode {self.stitch!r}")

    @property
    def d_in(self) -> int:
        return self.d_x + self.d_u + 1

    @property
    def max_len(self) -> int:
        return self.context_len + self.pred_len

    @property
    def hidden(self) -> int:
        return self.embed_hidden or self.d_model


# Shipped configurations. Widths are picked so the parameter counts land near
# the reference sizes (about 3.4M for 20 layers, about 200k for 8 layers).
LARGE = ModelConfig(d_model=120, n_layers=20, n_heads=8, d_ff=448)
SMALL = ModelConfig(d_model=48, n_layers=8, n_heads=4, d_ff=144)
DESK = ModelConfig(d_model=64, n_layers=4, n_heads=4, d_ff=128)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Every parameter name and shape, derived from the config alone."""
    d, h, f = cfg.d_model, cfg.hidden, cfg.d_ff
    out = 2 * cfg.d_x
    shapes = {
        "embed.hidden.weight": (cfg.d_in, h), "embed.hidden.bias": (h,),
        "embed.output.weight": (h, d), "embed.output.bias": (d,),
        "embed.skip.weight": (cfg.d_in, d), "embed.skip.bias": (d,),
        "pos": (cfg.max_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        shapes.update({
            p + "ln1.gain": (d,), p + "ln1.shift": (d,),
            p + "qkv.weight": (d, 3 * d), p + "qkv.bias": (3 * d,),
            p + "proj.weight": (d, d), p + "proj.bias": (d,),
            p + "ln2.gain": (d,), p + "ln2.shift": (d,),
            p + "ff1.weight": (d, f), p + "ff1.bias": (f,),
            p + "ff2.weight": (f, d), p + "ff2.bias": (d,),
        })
    shapes.update({
        "ln_f.gain": (d,), "ln_f.shift": (d,),
        "head.hidden.weight": (d, h), "head.hidden.bias": (h,),
        "head.output.weight": (h, out), "head.output.bias": (out,),
        "head.skip.weight": (d, out), "head.skip.bias": (out,),
    })
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


class ResidualBlock(T.Module):
    """``output(gelu(hidden(x))) + skip(x)``."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng):
        self.hidden = T.Linear(n_in, n_hidden, rng)
        self.output = T.Linear(n_hidden, n_out, rng)
        self.skip = T.Linear(n_in, n_out, rng)

    def __call__(self, x):
        return self.output(T.gelu(self.hidden(x))) + self.skip(x)


class DecoderBlock(T.Module):
    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.ln1 = T.LayerNorm(d)
        self.qkv = T.Linear(d, 3 * d, rng)
        self.proj = T.Linear(d, d, rng)
        self.ln2 = T.LayerNorm(d)
        self.ff1 = T.Linear(d, cfg.d_ff, rng)
        self.ff2 = T.Linear(cfg.d_ff, d, rng)

    def attention(self, x):
        B, L, d = x.shape
        H = self.n_heads
        qkv = self.qkv(x).reshape(B, L, 3, H, d // H).transpose(2, 0, 3, 1, 4)
        o = T.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2], causal=True)
        return self.proj(o.transpose(0, 2, 1, 3).reshape(B, L, d))

    def __call__(self, x):
        x = x + self.attention(self.ln1(x))
        return x + self.ff2(T.gelu(self.ff1(self.ln2(x))))


class TransformerModel(T.Module):
    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        rng = substream(cfg.seed, "init")
        self.embed = ResidualBlock(cfg.d_in, cfg.hidden, cfg.d_model, rng)
        self.pos = T.parameter(rng.normal(0.0, 0.02, size=(cfg.max_len, cfg.d_model)))
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.ln_f = T.LayerNorm(cfg.d_model)
        self.head = ResidualBlock(cfg.d_model, cfg.hidden, PATCH_SIZE * cfg.d_x, rng)

    def __call__(self, inputs):
        return forward(self, inputs)


def build_inputs(states, actions, flags) -> np.ndarray:
    """Stack ``[state * (1 - flag), action, flag]`` along the last axis.

    ``states`` (..., L, d_x), ``actions`` (..., L, d_u), ``flags`` (..., L).
    """
    flags = np.asarray(flags, dtype=np.float64)[..., None]
    states = np.asarray(states, dtype=np.float64) * (1.0 - flags)
    return np.concatenate([states, np.asarray(actions, dtype=np.float64), flags], axis=-1)


def embed(model: TransformerModel, x, u, masked: bool = False) -> np.ndarray:
    """Embedding of one state-action pair (no positional term)."""
    cfg = model.config
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if x.shape != (cfg.d_x,) or u.shape != (cfg.d_u,):
        raise ValueError(
            f"embed expects state dim {cfg.d_x} and action dim {cfg.d_u}, got {x.shape}, {u.shape}"
        )
    z = build_inputs(x[None], u[None], [float(masked)])
    with T.no_grad():
        return model.embed(T.Tensor(z)).data[0]


def forward(model: TransformerModel, inputs) -> T.Tensor:
    """Patch predictions of shape ``(B, L, 2, d_x)`` for inputs ``(B, L, d_in)``.

    With ``config.normalize`` the states are standardised by the statistics
    of the unflagged positions and the outputs mapped back to raw units.
    """
    cfg = model.config
    x = inputs if isinstance(inputs, T.Tensor) else T.Tensor(inputs)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    B, L, d_in = x.shape
    if d_in != cfg.d_in:
        raise ValueError(f"input width {d_in} != d_x + d_u + 1 = {cfg.d_in}")
    if L > cfg.max_len:
        raise ValueError(f"sequence length {L} exceeds the maximum {cfg.max_len}")
    if cfg.normalize:
        mean, scale = context_stats(x.data, cfg.d_x)
        keep = 1.0 - x.data[..., -1:]
        shift = np.concatenate([mean * keep, np.zeros((B, L, d_in - cfg.d_x), x.dtype)], axis=-1)
        div = np.concatenate([np.broadcast_to(scale, (B, L, cfg.d_x)),
                              np.ones((B, L, d_in - cfg.d_x), x.dtype)], axis=-1)
        x = (x - T.Tensor(shift)) * T.Tensor(1.0 / div)
    h = model.embed(x) + (model.pos[:L] if L < cfg.max_len else model.pos)
    for blk in model.blocks:
        h = blk(h)
    out = model.head(model.ln_f(h)).reshape(B, L, PATCH_SIZE, cfg.d_x)
    full = (B, L, PATCH_SIZE, cfg.d_x)
    if cfg.anchor != "none":
        out = out + T.Tensor(anchor_forecast(x.data, cfg.d_x, cfg.anchor == "linear"))
    if cfg.normalize:
        out = (out * T.Tensor(np.broadcast_to(scale[:, :, None], full))
               + T.Tensor(np.broadcast_to(mean[:, :, None], full)))
    return out


def _latest_index(seen: np.ndarray) -> np.ndarray:
    L = seen.shape[-1]
    return np.maximum.accumulate(np.where(seen, np.arange(L), -1), axis=-1)


def anchor_forecast(inputs: np.ndarray, d_x: int, linear: bool = True) -> np.ndarray:
    """Reference forecast ``(B, L, 2, d_x)`` the network output is added to.

    Position ``i`` looks at the most recent unflagged position ``p <= i``
    and, for ``linear``, the one before it, ``q``; patch entry ``j`` gets
    ``x_p + (i + 1 + j - p) (x_p - x_q) / (p - q)``. Missing states count as
    zero and a missing ``q`` means zero velocity. Only positions up to ``i``
    are read, so causality is preserved.
    """
    B, L, _ = inputs.shape
    seen = inputs[..., -1] == 0
    states = inputs[..., :d_x]
    p = _latest_index(seen)
    xp = np.take_along_axis(states, np.maximum(p, 0)[..., None], axis=1) * (p >= 0)[..., None]
    lead = np.arange(L)[None, :, None] + 1 + np.arange(PATCH_SIZE)[None, None, :] - p[..., None]
    out = np.repeat(xp[:, :, None], PATCH_SIZE, axis=2)
    if linear:
        # latest observed strictly before p
        prev_seen = seen.copy()
        prev = np.full((B, L), -1)
        q_run = np.full(B, -1)
        last_run = np.full(B, -1)
        for i in range(L):
            upd = prev_seen[:, i]
            q_run = np.where(upd, last_run, q_run)
            last_run = np.where(upd, i, last_run)
            prev[:, i] = q_run
        q = prev
        xq = np.take_along_axis(states, np.maximum(q, 0)[..., None], axis=1)
        ok = (q >= 0) & (p >= 0)
        vel = np.where(ok[..., None], (xp - xq) / np.maximum(p - q, 1)[..., None], 0.0)
        out = out + lead[..., None] * vel[:, :, None]
    return out.astype(inputs.dtype)


NORM_FLOOR = 1e-4


def context_stats(inputs: np.ndarray, d_x: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-window, per-channel mean and scale of the unflagged states.

    Returns arrays of shape ``(B, 1, d_x)``; the scale is
    ``sqrt(var + NORM_FLOOR)``. Both are constants for differentiation.
    """
    w = 1.0 - inputs[..., -1:]
    n = np.maximum(w.sum(axis=1, keepdims=True), 1.0)
    xs = inputs[..., :d_x]
    mean = (w * xs).sum(axis=1, keepdims=True) / n
    var = (w * (xs - mean) ** 2).sum(axis=1, keepdims=True) / n
    return mean, np.sqrt(var + NORM_FLOOR)


def apply_mask(states, fraction: float, rng: np.random.Generator, n_context: int | None = None):
    """Mask ``round(fraction * n_context)`` distinct context positions.

    Returns the states with masked rows zeroed and the boolean indicator.
    Positions at or beyond ``n_context`` are never chosen.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    states = np.asarray(states, dtype=np.float64)
    L = states.shape[0]
    n_context = L if n_context is None else n_context
    count = int(math.floor(fraction * n_context + 0.5))
    mask = np.zeros(L, dtype=bool)
    if count:
        mask[rng.choice(n_context, size=count, replace=False)] = True
    out = states.copy()
    out[mask] = 0.0
    return out, mask


def _pad(a: np.ndarray, width: int, what: str) -> np.ndarray:
    if a.shape[-1] > width:
        raise ValueError(f"{what} has {a.shape[-1]} channels, model supports {width}")
    if a.shape[-1] == width:
        return a
    pad = np.zeros(a.shape[:-1] + (width - a.shape[-1],))
    return np.concatenate([a, pad], axis=-1)


def prediction_inputs(cfg: ModelConfig, states, actions) -> np.ndarray:
    """Inputs for windows ``(B, c+m, .)``: states past the context become flagged zeros."""
    states = _pad(np.asarray(states, dtype=np.float64), cfg.d_x, "states")
    actions = _pad(np.asarray(actions, dtype=np.float64), cfg.d_u, "actions")
    L = states.shape[-2]
    flags = np.zeros(states.shape[:-1])
    flags[..., cfg.context_len:] = 1.0
    if L != cfg.max_len:
        raise ValueError(f"window length {L} != context_len + pred_len = {cfg.max_len}")
    return build_inputs(states, actions, flags)


def stitch_stride2(patches: np.ndarray, c: int, m: int) -> np.ndarray:
    """Read ``m`` states from the patches at positions ``c-1, c+1, ...``."""
    n = -(-m // PATCH_SIZE)
    sel = patches[:, c - 1:c - 1 + PATCH_SIZE * n:PATCH_SIZE]  # (B, n, 2, d_x)
    return sel.reshape(sel.shape[0], n * PATCH_SIZE, -1)[:, :m]


def predict_windows(model: TransformerModel, states, actions) -> np.ndarray:
    """Predict states ``c..c+m-1`` for a batch of windows ``(B, c+m, .)``.

    Only the first ``c`` states of each window are read.
    """
    cfg = model.config
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if states.ndim == 2:
        return predict_windows(model, states[None], actions[None])[0]
    d_x = states.shape[-1]
    c, m = cfg.context_len, cfg.pred_len
    inputs = prediction_inputs(cfg, states, actions)
    with T.no_grad():
        if cfg.stitch == "stride2":
            preds = stitch_stride2(forward(model, inputs).data, c, m)
        else:
            preds = np.empty((len(inputs), m, cfg.d_x))
            for j in range(m):
                out = forward(model, inputs).data
                preds[:, j] = out[:, c - 1 + j, 0]
                inputs[:, c + j, :cfg.d_x] = preds[:, j]
                inputs[:, c + j, -1] = 0.0
    return preds[..., :d_x].astype(np.float64)


def predict(model: TransformerModel, context_states, context_actions, future_actions) -> np.ndarray:
    """``m`` predicted states following a ``c``-step context, given the future actions."""
    cfg = model.config
    cs = np.asarray(context_states, dtype=np.float64)
    ca = np.asarray(context_actions, dtype=np.float64)
    fa = np.asarray(future_actions, dtype=np.float64)
    if cs.ndim == 1:
        cs = cs[:, None]
    if ca.ndim == 1:
        ca = ca[:, None] if cfg.d_u else ca.reshape(len(ca), 0)
    if fa.ndim == 1:
        fa = fa[:, None] if cfg.d_u else fa.reshape(len(fa), 0)
    if len(cs) != cfg.context_len or len(ca) != cfg.context_len:
        raise ValueError(f"context must hold exactly context_len={cfg.context_len} steps, got {len(cs)}")
    if len(fa) != cfg.pred_len:
        raise ValueError(f"future_actions must hold pred_len={cfg.pred_len} steps, got {len(fa)}")
    states = np.concatenate([cs, np.zeros((cfg.pred_len, cs.shape[1]))])
    return predict_windows(model, states, np.concatenate([ca, fa]))


def save_model(model: TransformerModel, path, **meta) -> None:
    info = {"kind": "transformer", "config": asdict(model.config)}
    info.update(meta)
    T.save_container(path, model.state_dict(), info)


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)


def load_model(path) -> TransformerModel:
    tensors, manifest = T.load_container(path)
    meta = manifest["meta"]
    if meta.get("kind") != "transformer":
        raise T.CheckpointError(f"{path}: holds a {meta.get('kind')!r}, not a transformer")
    model = TransformerModel(config_from_dict(meta["config"]))
    model.load_state_dict(tensors)
    return model


def clone(model: TransformerModel, **overrides) -> TransformerModel:
    out = TransformerModel(replace(model.config, **overrides))
    out.load_state_dict(model.state_dict())
    return out
