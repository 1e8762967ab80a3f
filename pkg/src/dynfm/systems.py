"""Evaluation systems: a frictionless cart-pole, pink-noise excitation, and
ingestion of recorded trajectories.

State layout is ``(cart_pos, cart_vel, pole_angle, pole_ang_vel)`` with the
pole angle measured from upright. The pole is a uniform rod of half-length
``l`` hinged on the cart.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetFormatError, Trajectory, loads_csv, loads_dataset
from .rng import substream
from .trajgen import BLOWUP_LIMIT, BlowUpError


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.81
    force_scale: float = 10.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")


def cartpole_derivative(s, u: float, p: CartPoleParams) -> np.ndarray:
    """Time derivative ``(x_dot, x_ddot, theta_dot, theta_ddot)``."""
    _, xd, th, thd = np.asarray(s, dtype=np.float64)
    force = float(u) * p.force_scale
    total = p.cart_mass + p.pole_mass
    ml = p.pole_mass * p.pole_half_length
    sin, cos = np.sin(th), np.cos(th)
    tmp = (force + ml * thd**2 * sin) / total
    thdd = (p.gravity * sin - cos * tmp) / (
        p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos**2 / total)
    )
    xdd = tmp - ml * thdd * cos / total
    return np.array([xd, xdd, thd, thdd])


def cartpole_energy(s, p: CartPoleParams) -> float:
    """Kinetic plus potential energy of cart and rod (zero at a horizontal pole)."""
    _, xd, th, thd = np.asarray(s, dtype=np.float64)
    m, l = p.pole_mass, p.pole_half_length
    kinetic = (0.5 * (p.cart_mass + m) * xd**2 + m * l * xd * thd * np.cos(th)
               + (2.0 / 3.0) * m * l**2 * thd**2)
    return float(kinetic + m * p.gravity * l * np.cos(th))


def rk4_step(s: np.ndarray, u: float, p: CartPoleParams, h: float) -> np.ndarray:
    k1 = cartpole_derivative(s, u, p)
    k2 = cartpole_derivative(s + 0.5 * h * k1, u, p)
    k3 = cartpole_derivative(s + 0.5 * h * k2, u, p)
    k4 = cartpole_derivative(s + h * k3, u, p)
    return s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_cartpole(x0, actions, p: CartPoleParams, dt: float = 0.02, substeps: int = 4,
                      source_id: str = "") -> Trajectory:
    """Record one state per action; action ``k`` is held over ``[t_k, t_{k+1})``.

    The last action has no successor state and is stored as supplied.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    actions = np.asarray(actions, dtype=np.float64).reshape(-1)
    n = len(actions)
    if n < 2:
        raise ValueError("need at least two actions (one transition)")
    h = dt / substeps
    states = np.empty((n, 4))
    s = np.asarray(x0, dtype=np.float64).copy()
    states[0] = s
    for k in range(n - 1):
        for _ in range(substeps):
            s = rk4_step(s, actions[k], p, h)
        if not np.all(np.isfinite(s)) or np.any(np.abs(s) > BLOWUP_LIMIT):
            raise BlowUpError(k + 1)
        states[k + 1] = s
    return Trajectory(states, actions[:, None], dt, source_id)


@dataclass(frozen=True)
class PinkNoiseConfig:
    n_rows: int = 12
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 2:
            raise ValueError("n_rows must be >= 2")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")


def pink_noise(length: int, cfg: PinkNoiseConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Voss-McCartney 1/f noise.

    Row ``r`` is redrawn at every sample index whose lowest set bit is ``r``,
    so it holds its value for ``2**(r+1)`` samples on average; a white row is
    redrawn every sample. The output is the row sum scaled to unit variance
    times ``amplitude``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if rng is None:
        rng = substream(cfg.seed, "pink")
    idx = np.arange(length)
    low_bit = np.full(length, -1)
    nz = idx[1:]
    low_bit[1:] = np.log2(nz & -nz).astype(int)
    total = rng.standard_normal(length)  # white row
    for r in range(cfg.n_rows):
        redraw = low_bit == r
        redraw[0] = True
        values = rng.standard_normal(int(redraw.sum()))
        total += values[np.cumsum(redraw) - 1]
    return cfg.amplitude * total / np.sqrt(cfg.n_rows + 1)


def _dataset(trajs, dt, provenance) -> Dataset:
    return Dataset(trajs, 4, 1, dt, provenance)


def sample_fixed_dataset(n: int, p: CartPoleParams | None = None, init_spread: float = 0.2,
                         dt: float = 0.02, length: int = 64, seed: int = 0,
                         substeps: int = 4) -> Dataset:
    """Zero-action swings released at rest near upright."""
    p = p or CartPoleParams()
    zeros = np.zeros(length)
    trajs = []
    for i in range(n):
        rng = substream(seed, "cartpole-fixed", i)
        theta0 = rng.uniform(-init_spread, init_spread) if init_spread > 0 else 0.0
        x0 = np.array([0.0, 0.0, theta0, 0.0])
        trajs.append(simulate_cartpole(x0, zeros, p, dt, substeps, source_id=f"cp-fixed-{seed}-{i}"))
    prov = {"generator": "cartpole-fixed", "params": asdict(p), "init_spread": init_spread,
            "dt": dt, "length": length, "seed": seed, "substeps": substeps}
    return _dataset(trajs, dt, prov)


def default_param_ranges(spread: float = 0.5, base: CartPoleParams | None = None) -> dict:
    """Uniform ranges of +-``spread`` (relative) around ``base``."""
    if not 0 <= spread < 1:
        raise ValueError("spread must lie in [0, 1)")
    base = asdict(base or CartPoleParams())
    return {k: (v * (1 - spread), v * (1 + spread)) for k, v in base.items()}


def sample_randomized_dataset(n: int, param_ranges: dict | None = None,
                              noise_cfg: PinkNoiseConfig | None = None, init_spread: float = 0.2,
                              dt: float = 0.02, length: int = 64, seed: int = 0,
                              substeps: int = 4) -> Dataset:
    """Per-trajectory random parameters driven by a fresh pink-noise action."""
    ranges = param_ranges or default_param_ranges()
    noise_cfg = noise_cfg or PinkNoiseConfig()
    names = list(asdict(CartPoleParams()).keys())
    trajs = []
    for i in range(n):
        rng = substream(seed, "cartpole-random", i)
        params = CartPoleParams(**{k: float(rng.uniform(*ranges[k])) for k in names})
        theta0 = rng.uniform(-init_spread, init_spread) if init_spread > 0 else 0.0
        actions = pink_noise(length, noise_cfg, rng=substream(seed, "pink", i))
        x0 = np.array([0.0, 0.0, theta0, 0.0])
        sid = f"cp-rand-{seed}-{i}|" + ";".join(
            f"{k}={getattr(params, k)!r}" for k in names)
        trajs.append(simulate_cartpole(x0, actions, params, dt, substeps, source_id=sid))
    prov = {"generator": "cartpole-randomized",
            "param_ranges": {k: list(v) for k, v in ranges.items()},
            "pink_noise": asdict(noise_cfg), "init_spread": init_spread,
            "dt": dt, "length": length, "seed": seed, "substeps": substeps}
    return _dataset(trajs, dt, prov)


def ingest_recorded(path) -> Dataset:
    """Load a recorded dataset, NDJSON (``.ndjson``/``.jsonl``) or CSV by suffix."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".ndjson", ".jsonl", ".json"):
        return loads_dataset(text)
    if path.suffix.lower() == ".csv":
        return loads_csv(text, source=path.name)
    raise DatasetFormatError(f"unrecognised dataset suffix {path.suffix!r} (want .ndjson or .csv)")
