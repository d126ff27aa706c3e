#!/usr/bin/env python3
"""End-to-end desk experiment: generate data, train both conv variants,
evaluate on the held-out split, print a comparison table.

Usage: python scripts/train_synthetic.py [--epochs 20] [--n 2000] [--out runs/synth]
"""

import argparse
import dataclasses
import json
from pathlib import Path

from gravnorm.data import synth_generate
from gravnorm.metrics import metrics_report
from gravnorm.model import TaggerConfig, predict_scores, save_checkpoint
from gravnorm.train import TrainConfig, train, write_history_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--dropout", type=float, default=0.2)
    ap.add_argument("--out", default="runs/synth")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr = synth_generate(args.seed, args.n, role="train")
    va = synth_generate(args.seed + 1, max(1, args.n // 4), role="val")
    te = synth_generate(args.seed + 2, max(1, args.n // 4), role="test")

    results = {}
    for variant in ("norm", "original"):
        cfg = dataclasses.replace(TaggerConfig(), variant=variant,
                                  dropout=args.dropout)
        tc = TrainConfig(epochs=args.epochs, seed=args.seed, dropout=args.dropout)
        res = train(tr, va, cfg, tc,
                    log_fn=lambda r: print(f"[{variant}] epoch {r['epoch']:3d} "
                                           f"loss {r['train_loss']:.4f} "
                                           f"val_auc {r['val_auc']:.4f}"))
        scores = predict_scores(te.jets, res.params, cfg)
        report = metrics_report(scores, te.labels())
        results[variant] = report
        save_checkpoint(out / f"ckpt-{variant}", res.params, cfg, args.seed)
        write_history_csv(res.history, out / f"history-{variant}.csv")
        print(f"[{variant}] test: {json.dumps(report)}")

    (out / "results.json").write_text(json.dumps(results, indent=2) + "\n")
    print(f"\n{'variant':10s} {'acc':>8s} {'auc':>8s} {'rej30':>10s}")
    for variant, rep in results.items():
        print(f"{variant:10s} {rep['acc']:8.4f} {rep['auc']:8.4f} "
              f"{rep['rej30']:10.1f}")


if __name__ == "__main__":
    main()
