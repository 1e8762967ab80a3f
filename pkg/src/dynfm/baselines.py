"""Windowed one-step regressors (linear and feed-forward) rolled out
iteratively, plus the from-scratch small transformer configuration.

Regressor features flatten a window of 32 state-action pairs in time order,
``[x_k, u_k, x_{k+1}, u_{k+1}, ..., x_{k+31}, u_{k+31}]``, and the target is
``x_{k+32}``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import tensor as T
from .data import Dataset
from .model import SMALL, ModelConfig
from .rng import substream
from .training import AdamW

WINDOW = 32
FNN_HIDDEN = (128, 64, 32)


def window_features(states: np.ndarray, actions: np.ndarray, window: int = WINDOW):
    """All ``(features, next_state)`` pairs of one trajectory."""
    pairs = np.concatenate([states, actions], axis=1)
    n = len(states) - window
    if n < 1:
        return np.zeros((0, window * pairs.shape[1])), np.zeros((0, states.shape[1]))
    idx = np.arange(window)[None, :] + np.arange(n)[:, None]
    feats = pairs[idx].reshape(n, -1)
    return feats, states[window:window + n]


def dataset_windows(dataset: Dataset, window: int = WINDOW):
    parts = [window_features(tr.states, tr.actions, window) for tr in dataset]
    X = np.concatenate([p[0] for p in parts])
    Y = np.concatenate([p[1] for p in parts])
    if len(X) == 0:
        raise ValueError(f"dataset has no trajectory longer than the window ({window})")
    return X, Y


class FnnNet(T.Module):
    def __init__(self, n_in: int, n_out: int, hidden=FNN_HIDDEN, seed: int = 0):
        rng = substream(seed, "fnn-init")
        sizes = [n_in, *hidden]
        self.layers = [T.Linear(a, b, rng, std=np.sqrt(2.0 / a)) for a, b in zip(sizes, sizes[1:])]
        self.out = T.Linear(sizes[-1], n_out, rng, std=np.sqrt(1.0 / sizes[-1]))

    def __call__(self, x):
        for layer in self.layers:
            x = T.relu(layer(x))
        return self.out(x)


@dataclass(eq=False)
class WindowedRegressor:
    kind: str  # "linear" or "fnn"
    d_x: int
    d_u: int
    window: int = WINDOW
    weights: np.ndarray | None = None  # linear: (n_features + 1, d_x), last row is the intercept
    net: FnnNet | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_std: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.window * (self.d_x + self.d_u)

    def __call__(self, features) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.kind == "linear":
            return X @ self.weights[:-1] + self.weights[-1]
        Z = (X - self.x_mean) / self.x_std
        with T.no_grad():
            out = self.net(T.Tensor(Z)).data.astype(np.float64)
        return out * self.y_std + self.y_mean


def fit_linear(dataset: Dataset, ridge: float = 1e-8, window: int = WINDOW) -> WindowedRegressor:
    """Least squares via the normal equations ``(A^T A + ridge I) w = A^T y``,
    solved by Cholesky factorisation; ``A`` carries an intercept column."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    X, Y = dataset_windows(dataset, window)
    A = np.hstack([X, np.ones((len(X), 1))])
    G = A.T @ A
    if ridge == 0:
        eig = np.linalg.eigvalsh(G)
        if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
            raise np.linalg.LinAlgError(
                "normal equations are singular (collinear window features); use ridge > 0"
            )
    G[np.diag_indices_from(G)] += ridge
    try:
        W = scipy.linalg.solve(G, A.T @ Y, assume_a="pos")
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "normal equations are singular (collinear window features); use ridge > 0"
        ) from None
    return WindowedRegressor("linear", dataset.d_x, dataset.d_u, window, weights=W)


@dataclass(frozen=True)
class FnnConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    weight_decay: float = 0.01
    hidden: tuple = FNN_HIDDEN
    grad_clip: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))


def fnn_param_count(d_x: int, d_u: int, hidden=FNN_HIDDEN, window: int = WINDOW) -> int:
    sizes = [window * (d_x + d_u), *hidden, d_x]
    return sum(a * b + b for a, b in zip(sizes, sizes[1:]))


def fit_fnn(dataset: Dataset, cfg: FnnConfig = FnnConfig(), window: int = WINDOW) -> WindowedRegressor:
    """ReLU MLP on standardised window features, trained with AdamW on MSE."""
    X, Y = dataset_windows(dataset, window)
    x_mean, x_std = X.mean(0), X.std(0) + 1e-8
    y_mean, y_std = Y.mean(0), Y.std(0) + 1e-8
    net = FnnNet(X.shape[1], dataset.d_x, cfg.hidden, cfg.seed)
    reg = WindowedRegressor("fnn", dataset.d_x, dataset.d_u, window, net=net,
                            x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)
    Zx, Zy = (X - x_mean) / x_std, (Y - y_mean) / y_std
    opt = AdamW(net, cfg.lr, weight_decay=cfg.weight_decay, grad_clip=cfg.grad_clip)
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "fnn-shuffle", epoch).permutation(len(Zx))
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            diff = net(T.Tensor(Zx[idx])) - T.Tensor(Zy[idx])
            loss = (diff * diff).mean()
            net.zero_grad()
            T.backward(loss)
            opt.step()
    net.zero_grad()
    return reg


def iterative_rollout(reg: WindowedRegressor, context_states, context_actions, future_actions) -> np.ndarray:
    """Predict ``m`` states one step at a time, sliding predictions back into the window.

    Accepts a single context ``(c, .)`` or a batch ``(B, c, .)``; the last
    ``window`` pairs of the context are used.
    """
    cs = np.asarray(context_states, dtype=np.float64)
    ca = np.asarray(context_actions, dtype=np.float64)
    fa = np.asarray(future_actions, dtype=np.float64)
    single = cs.ndim == 2
    if single:
        cs, ca, fa = cs[None], ca[None], fa[None]
    if ca.ndim == 2:
        ca = ca[..., None]
    if fa.ndim == 2:
        fa = fa[..., None]
    m = fa.shape[1]
    if m < 1:
        raise ValueError("need at least one future action")
    w = reg.window
    if cs.shape[1] < w:
        raise ValueError(f"context has {cs.shape[1]} steps, the regressor needs {w}")
    pairs = np.concatenate([cs[:, -w:], ca[:, -w:]], axis=2)
    out = np.empty((cs.shape[0], m, reg.d_x))
    for j in range(m):
        nxt = reg(pairs.reshape(len(pairs), -1))
        out[:, j] = nxt
        new = np.concatenate([nxt, fa[:, j]], axis=1)[:, None]
        pairs = np.concatenate([pairs[:, 1:], new], axis=1)
    return out[0] if single else out


def small_transformer_config(**overrides) -> ModelConfig:
    """The 8-layer, roughly 200k-parameter transformer trained from scratch."""
    return replace(SMALL, **overrides)


def save_regressor(reg: WindowedRegressor, path) -> None:
    meta = {"kind": reg.kind, "d_x": reg.d_x, "d_u": reg.d_u, "window": reg.window}
    if reg.kind == "linear":
        tensors = {"weights": reg.weights}
    else:
        tensors = dict(reg.net.state_dict())
        tensors.update(x_mean=reg.x_mean, x_std=reg.x_std, y_mean=reg.y_mean, y_std=reg.y_std)
        meta["hidden"] = [layer.weight.shape[1] for layer in reg.net.layers]
    T.save_container(path, tensors, meta)


def load_regressor(path) -> WindowedRegressor:
    tensors, manifest = T.load_container(path)
    meta = manifest["meta"]
    kind = meta.get("kind")
    if kind == "linear":
        return WindowedRegressor("linear", meta["d_x"], meta["d_u"], meta["window"],
                                 weights=tensors["weights"])
    if kind != "fnn":
        raise T.CheckpointError(f"{path}: holds a {kind!r}, not a regressor")
    stats = {k: tensors.pop(k) for k in ("x_mean", "x_std", "y_mean", "y_std")}
    n_in = meta["window"] * (meta["d_x"] + meta["d_u"])
    net = FnnNet(n_in, meta["d_x"], meta["hidden"])
    net.load_state_dict(tensors)
    return WindowedRegressor("fnn", meta["d_x"], meta["d_u"], meta["window"], net=net, **stats)
