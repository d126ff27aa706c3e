#!/usr/bin/env python3
"""Measure radius-graph vs brute-force KNN construction time as the point
count grows at fixed density, and write the plot-ready table.

Usage: python scripts/topology_scaling.py [--sizes 2000,4000,8000,16000]
"""

import argparse
from pathlib import Path

from gravnorm.bench import bench_topology_scaling, write_scaling_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="2000,4000,8000,16000")
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--radius", type=float, default=1.0)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--target-degree", type=float, default=8.0)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/scaling")
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = bench_topology_scaling(sizes, dim=args.dim, r=args.radius, k=args.k,
                                  target_degree=args.target_degree,
                                  n_trials=args.trials, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scaling_csv(rows, out / "scaling.csv")

    print(f"{'N':>8s} {'radius (s)':>12s} {'knn (s)':>12s} {'mean degree':>12s}")
    for row in rows:
        print(f"{row['n']:8d} {row['radius_seconds']:12.5f} "
              f"{row['knn_seconds']:12.5f} {row['mean_degree']:12.2f}")
    if len(rows) >= 2:
        r_ratio = rows[-1]["radius_seconds"] / rows[0]["radius_seconds"]
        k_ratio = rows[-1]["knn_seconds"] / rows[0]["knn_seconds"]
        n_ratio = rows[-1]["n"] / rows[0]["n"]
        print(f"\nsize x{n_ratio:.0f}: radius time x{r_ratio:.1f}, "
              f"knn time x{k_ratio:.1f}")


if __name__ == "__main__":
    main()
