"""Command line entry point: synth, train, eval, bench, inspect.

Exit codes: 0 success, 1 contract/ingestion error, 2 usage error.  Every
run that produces files also writes the resolved configuration as JSON
next to them; re-running a subcommand with --from-config <that file>
reproduces the run (only --out is taken from the command line).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from .errors import EngineError
from .metrics import metrics_report
from .model import (BlockConfig, TaggerConfig, load_checkpoint, param_count,
                    predict_scores, save_checkpoint)
from .train import TrainConfig, train as train_loop, write_history_csv

CONFIG_NAME = "config.json"


def _write_config(args: argparse.Namespace, out_dir: Path):
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("func", "from_config")}
    resolved["subcommand"] = args.func.__name__.removeprefix("cmd_")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / CONFIG_NAME, "w") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _apply_from_config(args: argparse.Namespace):
    if getattr(args, "from_config", None) is None:
        return args
    with open(args.from_config) as fh:
        stored = json.load(fh)
    expected = args.func.__name__.removeprefix("cmd_")
    if stored.get("subcommand") != expected:
        raise EngineError(f"config was written by subcommand "
                          f"{stored.get('subcommand')!r}, not {expected!r}")
    for key, value in stored.items():
        if key in ("subcommand", "out") or not hasattr(args, key):
            continue
        setattr(args, key, value)
    return args


def _data_path(directory: str, role: str, fmt: str) -> Path:
    return Path(directory) / f"{role}.{fmt}"


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": args.n, "val": max(1, args.n // 4),
              "test": max(1, args.n // 4)}
    for offset, (role, count) in enumerate(counts.items()):
        split = data_mod.synth_generate(args.seed + offset, count,
                                        n_min=args.n_min, n_max=args.n_max,
                                        role=role)
        data_mod.save_jets(split, _data_path(args.out, role, args.format),
                           format=args.format)
    _write_config(args, out)
    return 0


def _model_config(args, in_features: int) -> TaggerConfig:
    block = BlockConfig(s_dim=args.sdim, g=args.g, r=args.radius, k=args.k)
    return TaggerConfig(variant=args.variant, in_features=in_features,
                        blocks=[BlockConfig(**vars(block)) for _ in range(args.blocks)],
                        dropout=args.dropout)


def cmd_train(args) -> int:
    train_split = data_mod.load_jets(_data_path(args.data, "train", args.format),
                                     format=args.format, role="train")
    val_split = data_mod.load_jets(_data_path(args.data, "val", args.format),
                                   format=args.format, role="val")
    if not train_split.jets:
        raise EngineError("training split is empty")
    in_features = train_split.jets[0].features.shape[1]
    model_cfg = _model_config(args, in_features)
    train_cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
        seed=args.seed, dropout=args.dropout, patience=args.patience)

    def log_row(row):
        print(f"epoch {row['epoch']:3d}  train_loss {row['train_loss']:.4f}  "
              f"val_loss {row['val_loss']:.4f}  val_auc {row['val_auc']:.4f}  "
              f"val_acc {row['val_acc']:.4f}", file=sys.stderr)

    result = train_loop(train_split, val_split, model_cfg, train_cfg,
                        log_fn=log_row)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "ckpt", result.params, model_cfg, args.seed)
    write_history_csv(result.history, out / "history.csv")
    _write_config(args, out)
    print(f"best epoch {result.best_epoch}, val_auc {result.best_val_auc:.4f}",
          file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    params, cfg, _ = load_checkpoint(args.ckpt)
    split = data_mod.load_jets(args.data, format=args.format, role="test")
    if not split.jets:
        raise EngineError("evaluation split is empty")
    scores = predict_scores(split.jets, params, cfg, batch_size=args.batch)
    report = metrics_report(scores, split.labels())
    print(json.dumps(report, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
        _write_config(args, out)
    return 0


def cmd_bench(args) -> int:
    out = Path(args.out) if args.out else None
    if args.mode == "inference":
        params, cfg, _ = load_checkpoint(args.ckpt)
        split = data_mod.load_jets(args.data, format=args.format, role="test")
        report = bench_mod.bench_inference(params, cfg, split.jets,
                                           batch_size=args.batch,
                                           n_trials=args.trials,
                                           parallel=args.parallel)
        print(report.to_json())
        if out:
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.json").write_text(report.to_json() + "\n")
            bench_mod.write_bench_csv(report, out / "report.csv")
            _write_config(args, out)
    else:
        sizes = [int(s) for s in args.sizes.split(",")]
        rows = bench_mod.bench_topology_scaling(
            sizes, dim=args.dim, r=args.radius, k=args.k,
            target_degree=args.target_degree, n_trials=args.trials,
            seed=args.seed)
        print(json.dumps(rows))
        if out:
            out.mkdir(parents=True, exist_ok=True)
            bench_mod.write_scaling_csv(rows, out / "scaling.csv")
            _write_config(args, out)
    return 0


def cmd_inspect(args) -> int:
    if (args.ckpt is None) == (args.data is None):
        raise EngineError("inspect needs exactly one of --ckpt or --data")
    if args.ckpt:
        params, cfg, seed = load_checkpoint(args.ckpt)
        info = {"format": "gravnorm-ckpt-v1", "variant": cfg.variant,
                "n_blocks": len(cfg.blocks), "in_features": cfg.in_features,
                "param_count": param_count(params), "seed": seed}
    else:
        split = data_mod.load_jets(args.data, format=args.format, role="test")
        sizes = [len(j.features) for j in split.jets]
        labels = split.labels()
        info = {"path": args.data, "n_jets": len(split.jets),
                "n_malformed": split.malformed,
                "n_signal": int(np.sum(labels == 1)) if len(labels) else 0,
                "n_background": int(np.sum(labels == 0)) if len(labels) else 0,
                "nodes_min": min(sizes) if sizes else 0,
                "nodes_max": max(sizes) if sizes else 0,
                "n_features": int(split.jets[0].features.shape[1]) if sizes else 0}
    print(json.dumps(info, sort_keys=True))
    return 0


def _add_common_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=("norm", "original"), default="norm")
    p.add_argument("--g", type=float, default=3.0, help="attention falloff")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--sdim", type=int, default=4)
    p.add_argument("--dropout", type=float, default=0.2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gravnorm")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate synthetic train/val/test splits")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n", type=int, default=200, help="training jets; val/test get n/4")
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--n-max", type=int, default=40)
    p.add_argument("--format", choices=("jsonl", "bin"), default="jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--from-config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a tagger")
    _add_common_model_flags(p)
    p.add_argument("--data", required=True, help="directory with train/val files")
    p.add_argument("--format", choices=("jsonl", "bin"), default="jsonl")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--from-config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a jet file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("jsonl", "bin"), default="jsonl")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--out")
    p.add_argument("--from-config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="inference cost or topology scaling")
    p.add_argument("--mode", choices=("inference", "scaling"), default="inference")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--format", choices=("jsonl", "bin"), default="jsonl")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--parallel", action="store_true")
    p.add_argument("--sizes", default="2000,4000,8000,16000")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--target-degree", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--from-config")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="summarize a checkpoint or jet file")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--format", choices=("jsonl", "bin"), default="jsonl")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args = _apply_from_config(args)
        return args.func(args)
    except (EngineError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
