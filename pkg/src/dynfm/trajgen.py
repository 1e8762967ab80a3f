"""Synthetic pretraining trajectories from sampled RKHS vector fields.

Pipeline: draw N fields, roll one Euler trajectory out of each from a uniform
initial state, keep those whose total variation is in range and whose context
and prediction windows have similar variation, then flatten the TV histogram
by capping every bin.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, Trajectory, total_variation
from .rkhs import SamplerConfig, sample_vector_field
from .rng import substream

BLOWUP_LIMIT = 1e6


class BlowUpError(ArithmeticError):
    def __init__(self, step: int, what: str = "state"):
        super().__init__(f"{what} diverged at step {step}")
        self.step = step


class Decision(enum.Enum):
    ACCEPT = "accept"
    REJECT_TV_RANGE = "reject_tv_range"
    REJECT_DELTA = "reject_delta"


@dataclass(frozen=True)
class TrajGenConfig:
    dt: float = 0.05
    horizon_steps: int = 63
    init_box: tuple[float, float] = (-5.0, 5.0)
    process_noise_std: float = 0.0
    tv_min: float = 0.5
    tv_max: float = 20.0
    delta: float = 15.0
    context_len: int = 32
    pred_len: int = 32
    n_bins: int = 20
    bin_cap: int | None = None  # None: ceil(n_functions / n_bins)
    n_functions: int = 1000
    d_u: int = 1
    min_accepted: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "init_box", tuple(self.init_box))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon_steps < 1 or self.n_functions < 1 or self.n_bins < 1:
            raise ValueError("horizon_steps, n_functions and n_bins must be positive")
        if self.context_len < 1 or self.pred_len < 1:
            raise ValueError("context_len and pred_len must be positive")
        if self.context_len + self.pred_len > self.horizon_steps + 1:
            raise ValueError(
                f"context_len + pred_len = {self.context_len + self.pred_len} exceeds"
                f" trajectory length {self.horizon_steps + 1}"
            )
        if not 0 <= self.tv_min < self.tv_max:
            raise ValueError(f"need 0 <= tv_min < tv_max, got {self.tv_min}, {self.tv_max}")
        if not 0 < self.delta < self.tv_max - self.tv_min:
            raise ValueError(
                f"delta must lie in (0, tv_max - tv_min = {self.tv_max - self.tv_min}),"
                f" got {self.delta}"
            )
        if self.process_noise_std < 0:
            raise ValueError("process_noise_std must be non-negative")
        lo, hi = self.init_box
        if not lo <= hi:
            raise ValueError(f"init_box must satisfy lo <= hi, got {self.init_box}")
        if self.bin_cap is not None and self.bin_cap < 1:
            raise ValueError("bin_cap must be positive")

    @property
    def effective_bin_cap(self) -> int:
        if self.bin_cap is not None:
            return self.bin_cap
        return max(1, math.ceil(self.n_functions / self.n_bins))


def euler_rollout(f, x0, cfg: TrajGenConfig, rng: np.random.Generator | None = None,
                  source_id: str = "") -> Trajectory:
    """Explicit Euler ``x_{k+1} = x_k + dt f(x_k) (+ noise)`` for ``horizon_steps`` steps.

    ``f`` is any callable mapping a state vector to its time derivative.
    Raises :class:`BlowUpError` when a state leaves ``|x| <= 1e6`` or turns non-finite.
    """
    x = np.array(x0, dtype=np.float64, ndmin=1)
    if x.ndim != 1:
        raise ValueError("x0 must be a vector")
    if cfg.process_noise_std > 0 and rng is None:
        raise ValueError("process noise needs an rng")
    T = cfg.horizon_steps
    states = np.empty((T + 1, x.shape[0]))
    states[0] = x
    for k in range(T):
        x = x + cfg.dt * np.asarray(f(x), dtype=np.float64)
        if cfg.process_noise_std > 0:
            x = x + rng.normal(0.0, cfg.process_noise_std, size=x.shape)
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > BLOWUP_LIMIT):
            raise BlowUpError(k + 1)
        states[k + 1] = x
    actions = np.zeros((T + 1, cfg.d_u))
    return Trajectory(states, actions, cfg.dt, source_id)


def context_prediction_tv(tr: Trajectory, c: int, m: int) -> tuple[float, float]:
    """TV of ``states[0:c]`` and of ``states[c:c+m]``."""
    if len(tr) < c + m:
        raise ValueError(f"trajectory of length {len(tr)} is shorter than c + m = {c + m}")
    return total_variation(tr.states[:c]), total_variation(tr.states[c:c + m])


def accept_trajectory(tr: Trajectory, cfg: TrajGenConfig) -> Decision:
    tv_ctx, tv_pred = context_prediction_tv(tr, cfg.context_len, cfg.pred_len)
    tv = total_variation(tr)
    if not cfg.tv_min <= tv <= cfg.tv_max:
        return Decision.REJECT_TV_RANGE
    if abs(tv_ctx - tv_pred) > cfg.delta:
        return Decision.REJECT_DELTA
    return Decision.ACCEPT


def tv_bin(tv: float, cfg: TrajGenConfig) -> int:
    """Index of the equal-width TV bin; the upper edge belongs to the last bin."""
    width = (cfg.tv_max - cfg.tv_min) / cfg.n_bins
    idx = int((tv - cfg.tv_min) // width)
    return min(max(idx, 0), cfg.n_bins - 1)


def bin_and_downsample(trs: list[Trajectory], cfg: TrajGenConfig,
                       rng: np.random.Generator | None = None) -> list[Trajectory]:
    """Keep at most ``bin_cap`` uniformly chosen members per TV bin, in input order."""
    if rng is None:
        rng = substream(cfg.seed, "downsample")
    cap = cfg.effective_bin_cap
    bins: dict[int, list[int]] = {}
    for i, tr in enumerate(trs):
        bins.setdefault(tv_bin(total_variation(tr), cfg), []).append(i)
    keep = []
    for b in sorted(bins):
        members = bins[b]
        if len(members) > cap:
            members = rng.choice(members, size=cap, replace=False).tolist()
        keep.extend(members)
    return [trs[i] for i in sorted(keep)]


def _candidate(scfg: SamplerConfig, tcfg: TrajGenConfig, i: int):
    field_ = sample_vector_field(scfg, index=i)
    rng = substream(tcfg.seed, "trajectory", i)
    lo, hi = tcfg.init_box
    x0 = rng.uniform(lo, hi, size=scfg.d_x)
    return euler_rollout(field_, x0, tcfg, rng=rng, source_id=f"rkhs-{scfg.seed}-{i}")


@dataclass
class GenerationStats:
    candidates: int = 0
    accepted: int = 0
    kept: int = 0
    rejects: dict = field(default_factory=lambda: {
        Decision.REJECT_TV_RANGE.value: 0, Decision.REJECT_DELTA.value: 0, "reject_blowup": 0,
    })


class InsufficientDataError(RuntimeError):
    pass


def generate_dataset(scfg: SamplerConfig, tcfg: TrajGenConfig) -> Dataset:
    """Sample fields, roll out, filter by TV, and balance the TV histogram."""
    stats = GenerationStats()
    accepted = []
    for i in range(tcfg.n_functions):
        stats.candidates += 1
        try:
            tr = _candidate(scfg, tcfg, i)
        except BlowUpError:
            stats.rejects["reject_blowup"] += 1
            continue
        decision = accept_trajectory(tr, tcfg)
        if decision is Decision.ACCEPT:
            accepted.append(tr)
        else:
            stats.rejects[decision.value] += 1
    stats.accepted = len(accepted)
    if stats.accepted < tcfg.min_accepted:
        raise InsufficientDataError(
            f"only {stats.accepted} of {stats.candidates} trajectories accepted"
            f" (minimum {tcfg.min_accepted}); rejects: {stats.rejects}"
        )
    kept = bin_and_downsample(accepted, tcfg)
    stats.kept = len(kept)
    provenance = {
        "generator": "rkhs",
        "sampler": asdict(scfg),
        "trajgen": asdict(tcfg),
        "seed": scfg.seed,
        "stats": asdict(stats),
        "target_norm": "independent per component",
    }
    return Dataset(kept, scfg.d_x, tcfg.d_u, tcfg.dt, provenance)


def sample_system_dataset(f, n: int, tcfg: TrajGenConfig, d_x: int, seed: int = 0,
                          tag: str = "system", max_attempts: int | None = None) -> Dataset:
    """``n`` accepted trajectories of one fixed vector field from uniform initial states.

    Candidates that blow up or fail :func:`accept_trajectory` are skipped;
    after ``max_attempts`` (default ``20 * n``) draws the shortfall is an error.
    """
    max_attempts = max_attempts or 20 * n
    lo, hi = tcfg.init_box
    kept = []
    stats = GenerationStats()
    for i in range(max_attempts):
        if len(kept) == n:
            break
        stats.candidates += 1
        rng = substream(seed, tag, i)
        try:
            tr = euler_rollout(f, rng.uniform(lo, hi, size=d_x), tcfg, rng=rng,
                               source_id=f"{tag}-{seed}-{i}")
        except BlowUpError:
            stats.rejects["reject_blowup"] += 1
            continue
        decision = accept_trajectory(tr, tcfg)
        if decision is Decision.ACCEPT:
            kept.append(tr)
        else:
            stats.rejects[decision.value] += 1
    if len(kept) < n:
        raise InsufficientDataError(
            f"only {len(kept)} of {stats.candidates} trajectories accepted for {tag!r}; "
            f"rejects: {stats.rejects}"
        )
    stats.accepted = stats.kept = n
    provenance = {"generator": "rkhs-system", "tag": tag, "seed": seed,
                  "trajgen": asdict(tcfg), "stats": asdict(stats)}
    return Dataset(kept, d_x, tcfg.d_u, tcfg.dt, provenance)
