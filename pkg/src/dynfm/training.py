"""AdamW, the patched MSE objective, augmentations, and the pretrain /
fine-tune loops."""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset, Trajectory
from .model import PATCH_SIZE, TransformerModel, build_inputs, forward, save_model
from .rng import substream


class TrainingError(RuntimeError):
    pass


class Phase(str, enum.Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


@dataclass(frozen=True)
class AugConfig:
    scale_range: tuple[float, float] = (0.5, 2.0)
    shift_range: tuple[float, float] = (-2.0, 2.0)
    noise_std: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        object.__setattr__(self, "shift_range", tuple(self.shift_range))
        if self.scale_range[0] > self.scale_range[1] or self.shift_range[0] > self.shift_range[1]:
            raise ValueError("augmentation ranges must satisfy min <= max")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 10
    batch_size: int = 64  # upper bound: each epoch splits into near-equal batches
    grad_clip: float | None = 1.0
    phase: Phase = Phase.PRETRAIN
    aug: AugConfig = field(default_factory=AugConfig)
    val_fraction: float = 0.1
    keep_best: bool = False
    lr_schedule: str = "constant"  # or "cosine": decay to lr * min_lr_ratio over all steps
    min_lr_ratio: float = 0.0
    min_steps: int = 0  # extend epochs until at least this many optimiser steps
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "phase", Phase(self.phase))
        if isinstance(self.aug, dict):
            object.__setattr__(self, "aug", AugConfig(**self.aug))
        b1, b2 = self.betas
        if not 0 < b1 < b2 < 1:
            raise ValueError(f"need 0 < beta1 < beta2 < 1, got {self.betas}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.min_steps < 0:
            raise ValueError("min_steps must be >= 0")
        if not 0 <= self.min_lr_ratio <= 1:
            raise ValueError("min_lr_ratio must lie in [0, 1]")


def effective_epochs(cfg: TrainConfig, n_train: int) -> int:
    """``cfg.epochs``, raised if needed so the run takes ``cfg.min_steps`` steps."""
    per_epoch = -(-n_train // cfg.batch_size)
    if per_epoch == 0 or cfg.epochs == 0:
        return cfg.epochs
    return max(cfg.epochs, -(-cfg.min_steps // per_epoch))


def scheduled_lr(cfg: TrainConfig, step: int, total: int) -> float:
    """Learning rate for 0-based ``step`` out of ``total`` optimiser steps."""
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.lr
    floor = cfg.lr * cfg.min_lr_ratio
    return floor + 0.5 * (cfg.lr - floor) * (1.0 + math.cos(math.pi * step / (total - 1)))


def finetune_recipe(pre: TrainConfig, **overrides) -> TrainConfig:
    """Standard fine-tune settings: a tenth of the learning rate, a fifth of the epochs."""
    cfg = replace(pre, lr=pre.lr * 0.1, epochs=max(1, pre.epochs // 5), phase=Phase.FINETUNE)
    return replace(cfg, **overrides)


# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamState, lr: float,
               betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """In-place AdamW update of numpy arrays keyed by name.

    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``
    """
    b1, b2 = betas
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * p
        p -= lr * update


class AdamW:
    def __init__(self, module: T.Module, lr=3e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, grad_clip: float | None = None):
        self.module = module
        self.lr, self.betas, self.eps = lr, betas, eps
        self.weight_decay, self.grad_clip = weight_decay, grad_clip
        self.state = AdamState()

    def step(self) -> float:
        named = dict(self.module.named_parameters())
        grads = {n: p.grad for n, p in named.items() if p.grad is not None}
        norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        if not math.isfinite(norm):
            raise TrainingError("non-finite gradient norm")
        if self.grad_clip is not None and norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)
            grads = {n: g * scale for n, g in grads.items()}
        adamw_step({n: p.data for n, p in named.items()}, grads, self.state,
                   self.lr, self.betas, self.eps, self.weight_decay)
        return norm


# objective


def patch_loss(pred: T.Tensor, targets: np.ndarray, valid: np.ndarray) -> T.Tensor:
    """Mean squared error over the entries where ``valid`` is 1."""
    valid = np.asarray(valid, dtype=pred.dtype)
    count = float(valid.sum())
    if count == 0:
        raise ValueError("loss over an empty set of valid entries")
    diff = (pred - T.Tensor(targets)) * T.Tensor(valid)
    return (diff * diff).sum() * (1.0 / count)


def patch_targets(states: np.ndarray, d_x_model: int) -> tuple[np.ndarray, np.ndarray]:
    """Targets ``(B, L, 2, d_x_model)`` with ``target[:, i, j] = states[:, i+1+j]``
    and the matching validity mask (off the end of the window or in padded
    channels is invalid)."""
    B, L, d = states.shape
    tgt = np.zeros((B, L, PATCH_SIZE, d_x_model))
    valid = np.zeros_like(tgt)
    for j in range(PATCH_SIZE):
        n = L - 1 - j
        if n > 0:
            tgt[:, :n, j, :d] = states[:, 1 + j:1 + j + n]
            valid[:, :n, j, :d] = 1.0
    return tgt, valid


# augmentation


def augment_pretrain(tr: Trajectory, cfg: AugConfig, rng: np.random.Generator) -> Trajectory:
    """Scale and shift all states by one scalar pair drawn uniformly."""
    a = rng.uniform(*cfg.scale_range)
    b = rng.uniform(*cfg.shift_range)
    return Trajectory(a * tr.states + b, tr.actions.copy(), tr.dt, tr.source_id)


def augment_finetune(tr: Trajectory, cfg: AugConfig, rng: np.random.Generator) -> Trajectory:
    """Add iid N(0, noise_std^2) to every state entry."""
    if cfg.noise_std == 0:
        return Trajectory(tr.states.copy(), tr.actions.copy(), tr.dt, tr.source_id)
    noisy = tr.states + rng.normal(0.0, cfg.noise_std, size=tr.states.shape)
    return Trajectory(noisy, tr.actions.copy(), tr.dt, tr.source_id)


# batches


def make_batch(model: TransformerModel, trajs: list[Trajectory], rngs: list | None = None,
               mask_fraction: float = 0.0):
    """Inputs, targets and validity for a batch of windows of length ``c + m``.

    With ``rngs`` given, each trajectory gets a random window start (when it is
    longer than the window) and random context masking from its own stream.
    """
    cfg = model.config
    L, c = cfg.max_len, cfg.context_len
    B = len(trajs)
    d = trajs[0].d_x
    states = np.zeros((B, L, d))
    actions = np.zeros((B, L, cfg.d_u))
    flags = np.zeros((B, L))
    flags[:, c:] = 1.0
    for b, tr in enumerate(trajs):
        if len(tr) < L:
            raise ValueError(f"trajectory {tr.source_id!r} has {len(tr)} states, need {L}")
        if tr.d_x > cfg.d_x or tr.d_u > cfg.d_u:
            raise ValueError(
                f"trajectory dims ({tr.d_x}, {tr.d_u}) exceed model dims ({cfg.d_x}, {cfg.d_u})"
            )
        start = 0
        rng = rngs[b] if rngs is not None else None
        if rng is not None and len(tr) > L:
            start = int(rng.integers(0, len(tr) - L + 1))
        states[b] = tr.states[start:start + L]
        actions[b, :, :tr.d_u] = tr.actions[start:start + L]
        if rng is not None and mask_fraction > 0:
            count = int(math.floor(mask_fraction * c + 0.5))
            flags[b, rng.choice(c, size=count, replace=False)] = 1.0
    pad = np.zeros((B, L, cfg.d_x - d))
    inputs = build_inputs(np.concatenate([states, pad], axis=-1), actions, flags)
    tgt, valid = patch_targets(states, cfg.d_x)
    return inputs, tgt, valid


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = substream(seed, "split").permutation(n)
    n_val = int(math.floor(n * fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def evaluate_loss(model: TransformerModel, trajs: list[Trajectory], batch_size: int = 256) -> float:
    total, count = 0.0, 0.0
    with T.no_grad():
        for i in range(0, len(trajs), batch_size):
            inputs, tgt, valid = make_batch(model, trajs[i:i + batch_size])
            n = float(valid.sum())
            total += patch_loss(forward(model, inputs), tgt, valid).item() * n
            count += n
    return total / count


@dataclass
class TrainResult:
    model: TransformerModel
    history: list = field(default_factory=list)  # dicts: epoch, split, loss


def write_history_csv(history: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "loss"])
        for row in history:
            w.writerow([row["epoch"], row["split"], format(row["loss"], ".17g")])


def _fit(model: TransformerModel, dataset: Dataset, cfg: TrainConfig, augment,
         checkpoint_dir=None, log=None) -> TrainResult:
    result = TrainResult(model)
    if cfg.epochs == 0 or len(dataset) == 0:
        return result
    train_idx, val_idx = split_indices(len(dataset), cfg.val_fraction, cfg.seed)
    train = [dataset[i] for i in train_idx]
    val = [dataset[i] for i in val_idx]
    opt = AdamW(model, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay, cfg.grad_clip)
    mask_fraction = model.config.mask_fraction
    ckdir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)
    best, best_state = math.inf, None
    per_epoch = -(-len(train) // cfg.batch_size)
    epochs = effective_epochs(cfg, len(train))
    total, step = epochs * per_epoch, 0
    for epoch in range(1, epochs + 1):
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(train))
        losses, weights = [], []
        # near-equal batches: a ragged remainder (e.g. 65 = 64 + 1) would give
        # single trajectories full-weight steps
        for b, idx in enumerate(np.array_split(order, per_epoch)):
            rngs = [substream(cfg.seed, "sample", epoch, int(train_idx[i])) for i in idx]
            batch = [augment(train[i], cfg.aug, r) for i, r in zip(idx, rngs)]
            inputs, tgt, valid = make_batch(model, batch, rngs, mask_fraction)
            loss = patch_loss(forward(model, inputs), tgt, valid)
            value = loss.item()
            if not math.isfinite(value):
                # parameters still hold the last good step
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.zero_grad()
            T.backward(loss)
            opt.lr = scheduled_lr(cfg, step, total)
            opt.step()
            step += 1
            losses.append(value)
            weights.append(len(idx))
        train_loss = float(np.average(losses, weights=weights))
        result.history.append({"epoch": epoch, "split": "train", "loss": train_loss})
        if val:
            val_loss = evaluate_loss(model, val)
            result.history.append({"epoch": epoch, "split": "val", "loss": val_loss})
        else:
            val_loss = train_loss
        if log:
            log(f"epoch {epoch}/{epochs} train {train_loss:.5g}" + (f" val {val_loss:.5g}" if val else ""))
        if val_loss < best:
            best = val_loss
            if cfg.keep_best:
                best_state = model.state_dict()
            if ckdir:
                save_model(model, ckdir / "best.ckpt", epoch=epoch, val_loss=val_loss)
        if ckdir:
            save_model(model, ckdir / f"epoch_{epoch:03d}.ckpt", epoch=epoch)
    if cfg.keep_best and best_state is not None:
        model.load_state_dict(best_state)
    model.zero_grad()
    return result


def pretrain(model: TransformerModel, dataset: Dataset, cfg: TrainConfig,
             checkpoint_dir=None, log=None) -> TrainResult:
    """Train on synthetic data with scale/shift augmentation."""
    return _fit(model, dataset, replace(cfg, phase=Phase.PRETRAIN), augment_pretrain,
                checkpoint_dir, log)


def finetune(model: TransformerModel, dataset: Dataset, cfg: TrainConfig,
             pretrain_cfg: TrainConfig | None = None, checkpoint_dir=None, log=None) -> TrainResult:
    """Continue training on system data with Gaussian state noise."""
    if cfg.phase is not Phase.FINETUNE:
        raise ValueError("finetune needs a config with phase='finetune'")
    if pretrain_cfg is not None:
        if cfg.lr > pretrain_cfg.lr:
            warnings.warn(f"fine-tune lr {cfg.lr} exceeds pretraining lr {pretrain_cfg.lr}")
        if cfg.epochs > pretrain_cfg.epochs:
            warnings.warn(f"fine-tune epochs {cfg.epochs} exceed pretraining epochs {pretrain_cfg.epochs}")
    return _fit(model, dataset, cfg, augment_finetune, checkpoint_dir, log)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["phase"] = cfg.phase.value
    return d
