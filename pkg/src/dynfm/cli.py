"""Command-line entry point: ``dynfm <command> [options]``.

Failures exit nonzero and print one JSON object on stderr, e.g.
``{"error": "ValueError", "message": "...", "command": "predict"}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .config import ExperimentConfig, load_config
from .data import Dataset, Trajectory, dumps_csv, save_dataset
from .evaluation import run_experiment, system_dataset
from .model import TransformerModel, load_model, predict, save_model
from .rng import substream
from .systems import ingest_recorded, pink_noise, simulate_cartpole
from .training import finetune, pretrain, write_history_csv
from .trajgen import generate_dataset

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    if seed is None:
        return cfg
    tr = cfg.train
    return replace(
        cfg,
        sampler=replace(cfg.sampler, seed=seed),
        trajgen=replace(cfg.trajgen, seed=seed),
        systems=replace(cfg.systems, seed=seed),
        model=replace(cfg.model, seed=seed),
        train=replace(tr, pretrain=replace(tr.pretrain, seed=seed),
                      finetune=replace(tr.finetune, seed=seed),
                      scratch=replace(tr.scratch, seed=seed), fnn=replace(tr.fnn, seed=seed)),
        eval=replace(cfg.eval, seed=seed),
    )


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    return Path(args.out)


def _history_path(out: Path, explicit) -> Path:
    return Path(explicit) if explicit else out.with_name(out.stem + ".history.csv")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    out = _require_out(args)
    if args.kind == "rkhs":
        ds = generate_dataset(cfg.sampler, cfg.trajgen)
    else:
        ds = system_dataset(replace(cfg.systems, kind=args.kind))
    save_dataset(ds, out)
    _log(f"wrote {len(ds)} trajectories to {out}")
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    out = _require_out(args)
    data = ingest_recorded(args.data)
    model = load_model(args.init) if args.init else TransformerModel(cfg.model)
    res = pretrain(model, data, cfg.train.pretrain, args.checkpoint_dir, log=_log)
    save_model(model, out, phase="pretrain", epochs=cfg.train.pretrain.epochs)
    write_history_csv(res.history, _history_path(out, args.history))
    return 0


def cmd_finetune(cfg: ExperimentConfig, args) -> int:
    out = _require_out(args)
    data = ingest_recorded(args.data)
    model = load_model(args.model)
    res = finetune(model, data, cfg.train.finetune, cfg.train.pretrain, args.checkpoint_dir, log=_log)
    save_model(model, out, phase="finetune", epochs=cfg.train.finetune.epochs)
    write_history_csv(res.history, _history_path(out, args.history))
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    out = _require_out(args)
    data = ingest_recorded(args.data) if args.data else None
    ckpt = args.model or cfg.eval.pretrained
    pre = load_model(ckpt) if ckpt else None
    report = run_experiment(cfg, data, pre, log=_log)
    report.save(out.with_suffix(".json"), out)
    if report.partial:
        first = report.failures[0]
        raise _Partial(f"{len(report.failures)} sub-run(s) failed; first: {first['model']} "
                       f"{first['level']} seed {first['seed']}: {first['error']}")
    return 0


class _Partial(RuntimeError):
    pass


def cmd_predict(cfg: ExperimentConfig, args) -> int:
    model = load_model(args.model)
    c, m = model.config.context_len, model.config.pred_len
    ds = ingest_recorded(args.input)
    if not 0 <= args.index < len(ds):
        raise ValueError(f"trajectory index {args.index} out of range for {len(ds)} trajectories")
    tr = ds[args.index]
    if len(tr) < c:
        raise ValueError(f"trajectory has {len(tr)} steps; prediction needs a context of "
                         f"context_len={c} steps")
    fa = tr.actions[c:c + m]
    if len(fa) < m:
        fa = np.concatenate([fa, np.zeros((m - len(fa), tr.d_u))])
    preds = predict(model, tr.states[:c], tr.actions[:c], fa)
    future = Trajectory(preds, fa, tr.dt, f"{tr.source_id}|predicted")
    text = dumps_csv(future, t0=c * tr.dt)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    sc = cfg.systems
    if args.action == "pink":
        actions = pink_noise(args.steps, sc.pink_noise, rng=substream(sc.seed, "pink-sim"))
    else:
        actions = np.zeros(args.steps)
    x0 = np.array([0.0, 0.0, args.theta0, 0.0])
    tr = simulate_cartpole(x0, actions, sc.params, sc.dt, sc.substeps, source_id="cli-simulate")
    if args.out and Path(args.out).suffix.lower() != ".csv":
        save_dataset(Dataset([tr], 4, 1, sc.dt, {"generator": "simulate", "theta0": args.theta0}),
                     args.out)
    elif args.out:
        Path(args.out).write_text(dumps_csv(tr), encoding="utf-8")
    else:
        sys.stdout.write(dumps_csv(tr))
    return 0


COMMANDS = {
    "generate": cmd_generate, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "evaluate": cmd_evaluate, "predict": cmd_predict, "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="experiment config JSON")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override every seed in the config")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output path")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="BLAS thread limit")
    g.add_argument("--precision", choices=["f32", "f64"], default=argparse.SUPPRESS)

    p = _Parser(prog="dynfm", parents=[common],
                description="Synthetic-data pretraining toolkit for dynamics forecasting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("generate", parents=[common], help="write an NDJSON dataset")
    s.add_argument("--kind", choices=["rkhs", "cartpole-fixed", "cartpole-randomized"], default="rkhs")

    for name, helptext in (("pretrain", "pretrain a transformer"), ("finetune", "fine-tune a checkpoint")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--data", required=True, help="training dataset (.ndjson or .csv)")
        if name == "pretrain":
            s.add_argument("--init", help="start from this checkpoint instead of a fresh model")
        else:
            s.add_argument("--model", required=True, help="pretrained checkpoint")
        s.add_argument("--history", help="loss-history CSV (default: <out stem>.history.csv)")
        s.add_argument("--checkpoint-dir", help="write per-epoch and best checkpoints here")

    s = sub.add_parser("evaluate", parents=[common], help="run the model comparison sweep")
    s.add_argument("--data", help="evaluation dataset (default: from config)")
    s.add_argument("--model", help="pretrained checkpoint (default: eval.pretrained)")

    s = sub.add_parser("predict", parents=[common], help="forecast one trajectory")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="trajectory file (.ndjson or .csv)")
    s.add_argument("--index", type=int, default=0, help="which trajectory of the file")

    s = sub.add_parser("simulate", parents=[common], help="simulate one cart-pole trajectory")
    s.add_argument("--steps", type=int, default=64)
    s.add_argument("--theta0", type=float, default=0.1)
    s.add_argument("--action", choices=["zero", "pink"], default="zero")
    return p


def main(argv=None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        for name, default in (("config", None), ("seed", None), ("out", None),
                              ("threads", None), ("precision", "f32")):
            if not hasattr(args, name):
                setattr(args, name, default)
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = _with_seed(cfg, args.seed)
        with T.precision(args.precision), threadpool_limits(args.threads):
            return COMMANDS[command](cfg, args)
    except UsageError as e:
        _emit_error(e, command)
        return EXIT_USAGE
    except _Partial as e:
        _emit_error(e, command, "PartialReport")
        return EXIT_PARTIAL
    except (Exception, SystemExit) as e:  # noqa: BLE001 - reported as a JSON line
        if isinstance(e, SystemExit):
            if e.code in (0, None):
                return 0
        _emit_error(e, command)
        return EXIT_FAILURE


def _emit_error(e: BaseException, command, kind=None) -> None:
    line = {"error": kind or type(e).__name__, "message": str(e), "command": command}
    print(json.dumps(line), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
