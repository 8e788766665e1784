"""Command-line interface.

Commands: gen-data, train, eval, imagine, mpc, bench. Long-form flags
only. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure. PSWM_SEED is the seed fallback when neither flag nor config
provides one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from ..substrate import NumericError
from .config import DataError, RunConfig, UsageError, load_config


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--desk", action="store_true", help="apply the desk-scale preset")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")


def _build_parser() -> _Parser:
    p = _Parser(prog="pswm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an episode dataset")
    g.add_argument("--env", required=True, choices=["distracting", "doors"])
    g.add_argument("--width", type=int, default=10, help="hallway width (distracting)")
    g.add_argument("--keys", type=int, default=3, help="number of keys (doors)")
    g.add_argument("--train", type=int, required=True)
    g.add_argument("--val", type=int, required=True)
    g.add_argument("--test", type=int, required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--frame-size", type=int, default=32)
    g.add_argument("--raw", action="store_true", help="store frames uncompressed")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a world model")
    _add_config_flags(t)
    t.add_argument("--dataset", default=None)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--run", required=True, help="run directory from train")
    e.add_argument("--dataset", default=None)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--horizon", type=int, default=0)
    e.add_argument("--episodes", type=int, default=0)
    e.add_argument("--checkpoint", default="best.ckpt")
    e.add_argument("--out", default=None, help="output directory (default RUN/eval-SPLIT)")

    i = sub.add_parser("imagine", help="dump imagination PNG grids")
    i.add_argument("--run", required=True)
    i.add_argument("--dataset", default=None)
    i.add_argument("--split", default="test", choices=["train", "val", "test"])
    i.add_argument("--episodes", type=int, default=4)
    i.add_argument("--horizon", type=int, default=0)
    i.add_argument("--checkpoint", default="best.ckpt")
    i.add_argument("--out", default=None)

    m = sub.add_parser("mpc", help="skill-level planning on keys-and-doors")
    m.add_argument("--run", default=None, help="trained run directory (omit for --oracle)")
    m.add_argument("--oracle", action="store_true", help="plan with the true environment")
    m.add_argument("--keys", type=int, default=3)
    m.add_argument("--tasks", type=int, default=20)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--frame-size", type=int, default=32)
    m.add_argument("--checkpoint", default="best.ckpt")
    m.add_argument("--out", default=None, help="write the JSON report here")

    b = sub.add_parser("bench", help="throughput benchmark")
    _add_config_flags(b)
    b.add_argument("--seq-len", type=int, default=512)
    b.add_argument("--train-batches", type=int, default=20)
    b.add_argument("--imagine-context", type=int, default=100)
    b.add_argument("--imagine-horizon", type=int, default=100)
    b.add_argument("--out", default=None)
    return p


def _seed_or_env(value: int | None) -> int:
    if value is not None:
        return value
    return int(os.environ.get("PSWM_SEED", "0"))


def _load_run(run_dir: str, dataset: str | None, checkpoint: str):
    from ..envs.dataset import DatasetReader
    from ..substrate import checkpoint as ckpt
    from .train import build_model

    cfg_path = os.path.join(run_dir, "config.txt")
    if not os.path.exists(cfg_path):
        raise DataError(f"{run_dir} has no config.txt (not a run directory?)")
    cfg = load_config(cfg_path)
    ds_path = dataset or cfg.dataset
    if not ds_path:
        raise DataError("no dataset given (flag or config)")
    try:
        reader = DatasetReader(ds_path)
    except (OSError, ValueError) as e:
        raise DataError(str(e)) from e
    model = build_model(cfg, reader)
    ckpt_path = os.path.join(run_dir, checkpoint)
    if not os.path.exists(ckpt_path):
        raise DataError(f"checkpoint {ckpt_path} missing")
    ckpt.load(ckpt_path, model.store)
    return cfg, model, reader


def _cmd_gen_data(args) -> int:
    from ..envs.dataset import build_dataset

    if args.env == "distracting":
        if args.width < 6 or args.width % 2 != 0:
            raise UsageError("--width must be even and >= 6")
        param = args.width
    else:
        if not 1 <= args.keys <= 7:
            raise UsageError("--keys must be in 1..7")
        param = args.keys
    try:
        build_dataset(args.env, param, (args.train, args.val, args.test),
                      _seed_or_env(args.seed), args.out, frame_size=args.frame_size,
                      compress=not args.raw)
    except (OSError, RuntimeError) as e:
        raise DataError(str(e)) from e
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .train import run_lock, train

    cfg = load_config(args.config, desk=args.desk, overrides=args.overrides)
    if args.dataset:
        cfg.dataset = args.dataset
    if args.seed is not None:
        cfg.seed = args.seed
    with run_lock(args.out):
        summary = train(cfg, args.out, resume=args.resume, quiet=args.quiet)
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate

    cfg, model, reader = _load_run(args.run, args.dataset, args.checkpoint)
    out_dir = args.out or os.path.join(args.run, f"eval-{args.split}")
    report = evaluate(model, reader, split=args.split, horizon=args.horizon,
                      max_episodes=args.episodes, batch_size=cfg.batch_size,
                      seed=cfg.resolved_seed(), out_dir=out_dir, dump_pngs=0)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_imagine(args) -> int:
    from .evaluate import evaluate

    cfg, model, reader = _load_run(args.run, args.dataset, args.checkpoint)
    out_dir = args.out or os.path.join(args.run, f"imagine-{args.split}")
    report = evaluate(model, reader, split=args.split, horizon=args.horizon,
                      max_episodes=max(args.episodes, 1), batch_size=cfg.batch_size,
                      seed=cfg.resolved_seed(), out_dir=out_dir, dump_pngs=args.episodes)
    print(f"wrote PNG grids and eval.json to {out_dir}")
    print(json.dumps({k: v for k, v in report.items() if k != "gen_mse_per_step"}, indent=2))
    return 0


def _cmd_mpc(args) -> int:
    from .mpc import run_mpc

    model = None
    if not args.oracle:
        if not args.run:
            raise UsageError("mpc needs --run RUNDIR or --oracle")
        _, model, reader = _load_run(args.run, None, args.checkpoint)
        if reader.kind != "doors":
            raise DataError("mpc needs a keys-and-doors run")
        frame_size = reader.frame_size
        keys = reader.param
    else:
        frame_size = args.frame_size
        keys = args.keys
    report = run_mpc(keys, args.tasks, _seed_or_env(args.seed), frame_size, model=model)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=2)
    print(json.dumps({"n_tasks": report["n_tasks"],
                      "success_rate": report["success_rate"]}))
    return 0


def _cmd_bench(args) -> int:
    from .bench import bench

    cfg = load_config(args.config, desk=args.desk, overrides=args.overrides)
    report = bench(cfg, seq_len=args.seq_len, train_batches=args.train_batches,
                   imagine_context=args.imagine_context,
                   imagine_horizon=args.imagine_horizon, quiet=True)
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "imagine": _cmd_imagine,
    "mpc": _cmd_mpc,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
