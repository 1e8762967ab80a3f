"""Trajectory records, datasets, and their on-disk formats.

NDJSON dataset file (UTF-8, one JSON object per line)::

    {"version": 1, "d_x": 2, "d_u": 1, "dt": 0.05, "count": N, "provenance": {...}}
    {"id": "...", "states": [[...], ...], "actions": [[...], ...], "tv": 1.23}
    ...

Record floats are written with 17 significant digits so that every 64-bit
value survives a write/read cycle unchanged.

CSV recordings (see README for the byte-level layout) carry a header
``t,x0,...,x{d_x-1},u0,...,u{d_u-1}`` followed by one row per step; several
trajectories may share one file when separated by blank lines.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """A dataset file violates the NDJSON or CSV layout."""


@dataclass(eq=False)
class Trajectory:
    states: np.ndarray  # (T+1, d_x)
    actions: np.ndarray  # (T+1, d_u)
    dt: float
    source_id: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if self.actions.ndim == 1:
            self.actions = self.actions[:, None]
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValueError("states and actions must be 2-D (time, channel) arrays")
        if len(self.states) != len(self.actions):
            raise ValueError(
                f"states/actions length mismatch: {len(self.states)} vs {len(self.actions)}"
            )
        if len(self.states) < 2:
            raise ValueError("a trajectory needs at least two states")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise ValueError(f"trajectory {self.source_id!r} contains non-finite values")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def d_x(self) -> int:
        return self.states.shape[1]

    @property
    def d_u(self) -> int:
        return self.actions.shape[1]


def total_variation(tr) -> float:
    """Sum of Euclidean step lengths of the state sequence (actions ignored)."""
    states = tr.states if isinstance(tr, Trajectory) else np.asarray(tr, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if len(states) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(states, axis=0), axis=1)))


@dataclass(eq=False)
class Dataset:
    trajectories: list[Trajectory]
    d_x: int
    d_u: int
    dt: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for tr in self.trajectories:
            if tr.d_x != self.d_x or tr.d_u != self.d_u:
                raise ValueError(
                    f"trajectory {tr.source_id!r} has dims ({tr.d_x}, {tr.d_u}),"
                    f" dataset expects ({self.d_x}, {self.d_u})"
                )

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def select(self, indices, **provenance) -> "Dataset":
        prov = dict(self.provenance)
        prov.update(provenance)
        return Dataset([self.trajectories[i] for i in indices], self.d_x, self.d_u, self.dt, prov)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _fmt_tv(tv: float) -> str:
    # differences of huge finite states can overflow; tv is informational only
    return _fmt(tv) if math.isfinite(tv) else "null"


def _fmt_matrix(a: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join(_fmt(v) for v in row) + "]" for row in a) + "]"


def dumps_dataset(ds: Dataset) -> str:
    header = {
        "version": FORMAT_VERSION,
        "d_x": ds.d_x,
        "d_u": ds.d_u,
        "dt": ds.dt,
        "count": len(ds),
        "provenance": ds.provenance,
    }
    lines = [json.dumps(header, sort_keys=True, allow_nan=False)]
    for tr in ds.trajectories:
        lines.append(
            '{"id":' + json.dumps(tr.source_id)
            + ',"states":' + _fmt_matrix(tr.states)
            + ',"actions":' + _fmt_matrix(tr.actions)
            + ',"tv":' + _fmt_tv(total_variation(tr)) + "}"
        )
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def _matrix(value, width: int, what: str, lineno: int) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise DatasetFormatError(f"line {lineno}: {what} must be a non-empty list of rows")
    for row in value:
        if not isinstance(row, list) or len(row) != width:
            raise DatasetFormatError(
                f"line {lineno}: ragged {what}; every row needs {width} entries"
            )
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DatasetFormatError(f"line {lineno}: non-finite value in {what}")
    return arr


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file, expected a header object")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"line 1: malformed header ({e})") from None
    required = ("version", "d_x", "d_u", "dt", "count")
    if not isinstance(header, dict) or any(k not in header for k in required):
        raise DatasetFormatError(f"line 1: header must be an object with keys {required}")
    if header["version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported dataset version {header['version']!r}")
    d_x, d_u, dt = int(header["d_x"]), int(header["d_u"]), float(header["dt"])
    trajs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"line {lineno}: malformed record ({e})") from None
        if not isinstance(rec, dict) or "states" not in rec or "actions" not in rec:
            raise DatasetFormatError(f"line {lineno}: record needs 'states' and 'actions'")
        states = _matrix(rec["states"], d_x, "states", lineno)
        actions = _matrix(rec["actions"], d_u, "actions", lineno)
        if len(states) != len(actions):
            raise DatasetFormatError(f"line {lineno}: states and actions differ in length")
        try:
            trajs.append(Trajectory(states, actions, dt, str(rec.get("id", lineno - 2))))
        except ValueError as e:
            raise DatasetFormatError(f"line {lineno}: {e}") from None
    if len(trajs) != header["count"]:
        raise DatasetFormatError(
            f"line 1: header count {header['count']} does not match {len(trajs)} records"
        )
    return Dataset(trajs, d_x, d_u, dt, dict(header.get("provenance", {})))


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def dataset_hash(ds: Dataset) -> str:
    return hashlib.sha256(dumps_dataset(ds).encode("utf-8")).hexdigest()


def loads_csv(text: str, source: str = "csv") -> Dataset:
    """Parse the recorded-trajectory CSV layout into a dataset."""
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file, expected a header")
    cols = [c.strip() for c in lines[0].split(",")]
    if not cols or cols[0] != "t":
        raise DatasetFormatError("line 1: header must start with 't'")
    xs = [c for c in cols[1:] if c.startswith("x")]
    us = [c for c in cols[1:] if c.startswith("u")]
    expected = ["t"] + [f"x{i}" for i in range(len(xs))] + [f"u{i}" for i in range(len(us))]
    if cols != expected or not xs:
        raise DatasetFormatError(
            f"line 1: header must read {','.join(expected) if xs else 't,x0,...'}, got {lines[0]!r}"
        )
    d_x, d_u = len(xs), len(us)

    blocks: list[list[tuple[int, list[float]]]] = [[]]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            if blocks[-1]:
                blocks.append([])
            continue
        parts = line.split(",")
        if len(parts) != len(cols):
            raise DatasetFormatError(
                f"line {lineno}: expected {len(cols)} fields, found {len(parts)}"
            )
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise DatasetFormatError(f"line {lineno}: unparsable number in {line!r}") from None
        if not all(math.isfinite(v) for v in row):
            raise DatasetFormatError(f"line {lineno}: non-finite value in {line!r}")
        blocks[-1].append((lineno, row))
    blocks = [b for b in blocks if b]
    if not blocks:
        raise DatasetFormatError("no data rows")

    trajs = []
    dt = None
    for bi, block in enumerate(blocks):
        arr = np.array([r for _, r in block])
        if len(arr) < 2:
            raise DatasetFormatError(f"line {block[0][0]}: a trajectory needs at least two rows")
        steps = np.diff(arr[:, 0])
        step = float(np.mean(steps))
        if step <= 0 or np.max(np.abs(steps - step)) > 1e-6 * max(1.0, abs(step)):
            raise DatasetFormatError(
                f"line {block[0][0]}: time column must be strictly increasing and uniform"
            )
        if dt is None:
            dt = step
        elif abs(step - dt) > 1e-6 * max(1.0, abs(dt)):
            raise DatasetFormatError(
                f"line {block[0][0]}: time step {step} differs from earlier blocks ({dt})"
            )
        trajs.append(Trajectory(arr[:, 1:1 + d_x], arr[:, 1 + d_x:], dt, f"{source}#{bi}"))
    return Dataset(trajs, d_x, d_u, dt, {"source": source, "format": "csv"})


def dumps_csv(tr: Trajectory, t0: float = 0.0) -> str:
    head = ["t"] + [f"x{i}" for i in range(tr.d_x)] + [f"u{i}" for i in range(tr.d_u)]
    rows = [",".join(head)]
    for k in range(len(tr)):
        vals = [t0 + k * tr.dt, *tr.states[k], *tr.actions[k]]
        rows.append(",".join(_fmt(v) for v in vals))
    return "\n".join(rows) + "\n"
