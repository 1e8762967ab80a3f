"""Horizon MSE, nested data subsets, repeated experiment runs and the
report they produce (JSON plus a plot-ready CSV)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import fit_fnn, fit_linear, iterative_rollout
from .config import ExperimentConfig, SystemsConfig, to_dict
from .data import Dataset, load_dataset
from .model import TransformerModel, clone, predict_windows
from .rng import derive_seed, substream
from .systems import (CartPoleParams, default_param_ranges, ingest_recorded,
                      sample_fixed_dataset, sample_randomized_dataset)
from .training import finetune

MODEL_TAGS = ("Pre", "Ft", "LR", "FNN", "ST")
CSV_HEADER = "model,dataset,level,seed,mse"


def mse_horizon(pred, truth) -> float:
    """Mean over the horizon of squared Euclidean errors."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} does not match truth shape {t.shape}")
    if len(p) == 0:
        raise ValueError("empty horizon")
    return float(np.mean(np.sum((p - t) ** 2, axis=1)))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subset(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """``round(fraction * n)`` trajectories drawn without replacement.

    The draw is a prefix of one seeded permutation, so for a shared seed
    smaller fractions are always contained in larger ones. Survivors keep
    their original order.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    k = _round_half_up(fraction * len(dataset))
    if k == 0:
        raise ValueError(f"{fraction:g} of {len(dataset)} trajectories rounds to an empty subset")
    perm = substream(seed, "subset").permutation(len(dataset))
    return dataset.select(np.sort(perm[:k]), subset={"fraction": fraction, "seed": seed})


def holdout_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed ``(pool, test)`` index split shared by every model and level."""
    n_test = max(1, _round_half_up(fraction * n))
    if n_test >= n:
        raise ValueError(f"cannot hold out {n_test} of {n} trajectories")
    perm = substream(seed, "test-split").permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def level_label(fraction: float) -> str:
    return f"{fraction * 100:g}%"


@dataclass
class EvalReport:
    entries: list = field(default_factory=list)  # dicts: model, dataset, level, seed, mse
    failures: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def values(self, model: str, dataset: str, level: str) -> dict:
        """``{seed: mse}`` for one (model, dataset, level) cell."""
        return {e["seed"]: e["mse"] for e in self.entries
                if (e["model"], e["dataset"], e["level"]) == (model, dataset, level)}

    def aggregates(self) -> list:
        cells = {}
        for e in self.entries:
            cells.setdefault((e["model"], e["dataset"], e["level"]), []).append(e["mse"])

        def order(key):
            m, d, lvl = key
            rank = MODEL_TAGS.index(m) if m in MODEL_TAGS else len(MODEL_TAGS)
            return rank, d, float(lvl.rstrip("%"))

        rows = []
        for key in sorted(cells, key=order):
            v = np.asarray(cells[key])
            rows.append({"model": key[0], "dataset": key[1], "level": key[2],
                         "n": len(v), "median": float(np.median(v)),
                         "min": float(v.min()), "max": float(v.max()),
                         "range": float(v.max() - v.min())})
        return rows

    def range(self, model: str, dataset: str, level: str) -> float:
        v = list(self.values(model, dataset, level).values())
        if not v:
            raise KeyError(f"no entries for {model} / {dataset} / {level}")
        return float(max(v) - min(v))

    def compare_ranges(self, a: str, b: str, dataset: str, level: str) -> tuple[float, float]:
        """Ranges of two models, refusing cells built from different seed sets."""
        sa, sb = self.values(a, dataset, level), self.values(b, dataset, level)
        if set(sa) != set(sb):
            raise ValueError(f"{a} and {b} were run on different seed sets at {level}")
        return self.range(a, dataset, level), self.range(b, dataset, level)

    def to_json(self) -> str:
        doc = {"entries": self.entries, "aggregates": self.aggregates(),
               "failures": self.failures, "partial": self.partial,
               "seeds": self.seeds, "meta": self.meta}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER.split(","))
        for e in self.entries:
            w.writerow([e["model"], e["dataset"], e["level"], e["seed"], format(e["mse"], ".17g")])
        return buf.getvalue()

    def save(self, json_path=None, csv_path=None) -> None:
        if json_path:
            with open(json_path, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())
        if csv_path:
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.to_csv())

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls(doc["entries"], doc.get("failures", []), doc.get("seeds", []), doc.get("meta", {}))


def system_dataset(cfg: SystemsConfig) -> Dataset:
    """Build (or read) the evaluation dataset described by a systems section."""
    if cfg.kind == "recorded":
        return ingest_recorded(cfg.path)
    if cfg.kind == "cartpole-fixed":
        return sample_fixed_dataset(cfg.n, cfg.params, cfg.init_spread, cfg.dt, cfg.length,
                                    cfg.seed, cfg.substeps)
    ranges = default_param_ranges(cfg.param_spread, cfg.params)
    return sample_randomized_dataset(cfg.n, ranges, cfg.pink_noise, cfg.init_spread, cfg.dt,
                                     cfg.length, cfg.seed, cfg.substeps)


def state_hash(model: TransformerModel) -> str:
    h = hashlib.sha256()
    for name, arr in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _windows(dataset: Dataset, length: int):
    short = [tr.source_id for tr in dataset if len(tr) < length]
    if short:
        raise ValueError(f"{len(short)} test trajectories are shorter than {length} steps "
                         f"(first: {short[0]!r})")
    S = np.stack([tr.states[:length] for tr in dataset])
    A = np.stack([tr.actions[:length] for tr in dataset])
    return S, A


def horizon_errors(predictor, dataset: Dataset, c: int, m: int) -> np.ndarray:
    """Per-trajectory horizon MSE of ``predictor`` on the first ``c + m`` steps.

    ``predictor`` is a transformer or a windowed regressor.
    """
    S, A = _windows(dataset, c + m)
    if isinstance(predictor, TransformerModel):
        preds = predict_windows(predictor, S, A)
    else:
        preds = iterative_rollout(predictor, S[:, :c], A[:, :c], A[:, c:c + m])
    return np.mean(np.sum((preds - S[:, c:c + m]) ** 2, axis=-1), axis=-1)


@dataclass(frozen=True)
class _Job:
    model: str
    fraction: float
    seed: int


_CTX: dict = {}


def _set_context(ctx: dict) -> None:
    global _CTX
    _CTX = ctx


def _run_job(job: _Job) -> float:
    cfg: ExperimentConfig = _CTX["cfg"]
    pool, test, pre = _CTX["pool"], _CTX["test"], _CTX["pretrained"]
    c, m = _CTX["c"], _CTX["m"]
    if job.model == "Pre":
        return float(np.mean(horizon_errors(pre, test, c, m)))
    data = subset(pool, job.fraction, job.seed)
    if job.model == "Ft":
        model = clone(pre)
        finetune(model, data, replace(cfg.train.finetune, seed=job.seed), cfg.train.pretrain)
    elif job.model == "ST":
        model = TransformerModel(replace(cfg.eval.small_model, d_x=pool.d_x, d_u=pool.d_u,
                                         context_len=c, pred_len=m, seed=job.seed))
        finetune(model, data, replace(cfg.train.scratch, seed=job.seed))
    elif job.model == "LR":
        model = fit_linear(data, cfg.eval.ridge)
    else:
        model = fit_fnn(data, replace(cfg.train.fnn, seed=job.seed))
    return float(np.mean(horizon_errors(model, test, c, m)))


def repeat_seeds(seed: int, repeats: int) -> list:
    return [derive_seed(seed, "repeat", r) for r in range(repeats)]


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None,
                   pretrained: TransformerModel | None = None, log=None) -> EvalReport:
    """Every (model, level, repeat) sub-run of the configured sweep.

    Each repeat owns one seed that drives its data subset, weight
    initialisation and training order. Zero-shot ("Pre") rows are emitted at
    0% and, as a flat reference, at every requested level. A failing sub-run
    is recorded and the report is marked partial.
    """
    ev = cfg.eval
    if dataset is None:
        dataset = load_dataset(ev.dataset) if ev.dataset else system_dataset(cfg.systems)
    needs_pre = any(t in ("Pre", "Ft") for t in ev.models)
    if needs_pre and pretrained is None:
        raise ValueError("models Pre/Ft need a pretrained checkpoint")
    c, m = ((pretrained.config.context_len, pretrained.config.pred_len) if pretrained is not None
            else (cfg.model.context_len, cfg.model.pred_len))
    tag = ev.dataset_tag or dataset.provenance.get("generator", "dataset")
    pool_idx, test_idx = holdout_split(len(dataset), ev.test_fraction, ev.split_seed)
    pool, test = dataset.select(pool_idx), dataset.select(test_idx)
    _windows(test, c + m)
    seeds = repeat_seeds(ev.seed, ev.repeats)
    before = state_hash(pretrained) if pretrained is not None else None

    jobs = []
    for s in seeds:
        for model in ev.models:
            if model == "Pre":
                jobs.append(_Job("Pre", 0.0, s))
            else:
                jobs.extend(_Job(model, f, s) for f in ev.levels)

    ctx = {"cfg": cfg, "pool": pool, "test": test, "pretrained": pretrained, "c": c, "m": m}
    results = {}
    pre_value = None
    todo = [j for j in jobs if j.model != "Pre"]
    if any(j.model == "Pre" for j in jobs):
        # zero-shot prediction ignores the seed, so it is evaluated once
        _set_context(ctx)
        try:
            pre_value = _run_job(_Job("Pre", 0.0, seeds[0]))
        except Exception as e:  # noqa: BLE001 - recorded in the report
            pre_value = e
    if ev.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(ev.workers, initializer=_set_context, initargs=(ctx,)) as ex:
            futures = [ex.submit(_run_job, j) for j in todo]
            for j, fut in zip(todo, futures):
                try:
                    results[j] = fut.result()
                except Exception as e:  # noqa: BLE001
                    results[j] = e
                if log:
                    log(f"{j.model} {level_label(j.fraction)} seed {j.seed}: {results[j]}")
    else:
        _set_context(ctx)
        for j in todo:
            try:
                results[j] = _run_job(j)
            except Exception as e:  # noqa: BLE001
                results[j] = e
            if log:
                log(f"{j.model} {level_label(j.fraction)} seed {j.seed}: {results[j]}")
    _set_context({})

    report = EvalReport(seeds=seeds)
    for j in jobs:
        value = pre_value if j.model == "Pre" else results[j]
        levels = [0.0, *ev.levels] if j.model == "Pre" else [j.fraction]
        for f in levels:
            if isinstance(value, Exception):
                report.failures.append({"model": j.model, "dataset": tag, "level": level_label(f),
                                        "seed": j.seed, "error": f"{type(value).__name__}: {value}"})
            else:
                report.entries.append({"model": j.model, "dataset": tag, "level": level_label(f),
                                       "seed": j.seed, "mse": value})

    if pretrained is not None:
        after = state_hash(pretrained)
        if after != before:
            raise RuntimeError("pretrained weights changed during evaluation")
        report.meta["pretrained_hash"] = before
    report.meta.update(dataset=tag, n_pool=len(pool), n_test=len(test), context_len=c,
                       pred_len=m, eval=to_dict(ev))
    return report
