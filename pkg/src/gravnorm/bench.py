"""Inference cost and topology-construction scaling measurements.

Timings cover graph construction plus the forward pass only (data loading
and feature computation are excluded) and are medians over >= 5 trials
after warmup.  "Memory" is the tracemalloc high-water mark of the measured
call, labeled allocator_peak: this engine is CPU-resident, so device
memory does not apply.
"""

from __future__ import annotations

import json
import math
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import Tape
from .errors import ContractError, EngineError, ParameterError
from .model import TaggerConfig, TaggerParams, stack_jets, tagger_apply, tagger_forward
from .spatial import EdgeList, knn_neighbors, neighborhood_stats, radius_neighbors

BENCH_CSV_FIELDS = ("construction", "batch_size", "n_warmup", "n_trials",
                    "per_jet_micros", "topology_micros_per_jet",
                    "forward_micros_per_jet", "peak_bytes", "memory_kind",
                    "parallel", "per_layer_mean_degree")


@dataclass
class BenchReport:
    construction: str                 # "radius" | "knn"
    batch_size: int
    n_warmup: int
    n_trials: int
    per_jet_micros: float             # median batch seconds / batch_size
    topology_micros_per_jet: float
    forward_micros_per_jet: float
    peak_bytes: int
    per_layer_mean_degree: list[float] = field(default_factory=list)
    memory_kind: str = "allocator_peak"
    parallel: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def to_csv_row(self) -> dict:
        row = asdict(self)
        row["per_layer_mean_degree"] = ";".join(
            f"{d:.6g}" for d in self.per_layer_mean_degree)
        return row


def _limit_threads():
    """Pin BLAS pools to one thread for reproducible timings, if possible."""
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover
        import contextlib
        return contextlib.nullcontext()


def measure_peak(fn):
    """Run fn() and return (result, allocator peak bytes above baseline).

    The peak counter is reset before the call, so it is monotone
    non-decreasing within the run and independent across runs.
    """
    started_here = not tracemalloc.is_tracing()
    if started_here:
        tracemalloc.start()
    baseline, _ = tracemalloc.get_traced_memory()
    tracemalloc.reset_peak()
    try:
        result = fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if started_here:
            tracemalloc.stop()
    return result, max(peak - baseline, 0)


def bench_inference(params: TaggerParams, cfg: TaggerConfig, jets,
                    batch_size: int = 64, n_trials: int = 5, n_warmup: int = 2,
                    parallel: bool = False) -> BenchReport:
    """Median per-jet inference cost on one fixed batch of jets."""
    if n_trials < 5:
        raise ParameterError(f"need at least 5 trials, got {n_trials}")
    if len(jets) < batch_size:
        raise ContractError(f"dataset has {len(jets)} jets, "
                            f"need at least batch_size={batch_size}")
    batch = jets[:batch_size]
    x, gids = stack_jets(batch)  # feature prep excluded from timing

    def run_batched(timing):
        tape = Tape(record=False)
        return tagger_apply(tape, tape.leaf(x), gids, batch_size, params, cfg,
                            timing=timing)

    def run_parallel(timing):
        # per-jet tapes on worker threads; topology split not tracked here
        with ThreadPoolExecutor(max_workers=4) as pool:
            return list(pool.map(
                lambda j: tagger_forward(j, params, cfg), batch))

    run = run_parallel if parallel else run_batched

    with _limit_threads():
        for _ in range(n_warmup):
            run({})
        totals, topos, edge_lists = [], [], None
        for _ in range(n_trials):
            timing = {}
            t0 = time.perf_counter()
            out = run(timing)
            totals.append(time.perf_counter() - t0)
            topos.append(timing.get("topology_s", 0.0))
            if not parallel:
                edge_lists = out[1]
        _, peak = measure_peak(lambda: run({}))

    per_jet = float(np.median(totals)) / batch_size * 1e6
    topo_per_jet = float(np.median(topos)) / batch_size * 1e6
    if parallel:
        degrees = _parallel_degrees(batch, params, cfg)
    else:
        degrees = [neighborhood_stats(e, x.shape[0])[0] for e in edge_lists]
    return BenchReport(
        construction="radius" if cfg.variant == "norm" else "knn",
        batch_size=batch_size, n_warmup=n_warmup, n_trials=n_trials,
        per_jet_micros=per_jet, topology_micros_per_jet=topo_per_jet,
        forward_micros_per_jet=per_jet - topo_per_jet, peak_bytes=int(peak),
        per_layer_mean_degree=degrees, parallel=parallel)


def _parallel_degrees(batch, params, cfg):
    n_layers = len(params.blocks)
    edge_counts = np.zeros(n_layers)
    n_nodes = 0
    for jet in batch:
        _, edge_lists = tagger_forward(jet, params, cfg)
        n_nodes += len(jet.features)
        for i, e in enumerate(edge_lists):
            edge_counts[i] += len(e)
    return [c / n_nodes for c in edge_counts]


# ---- topology scaling -------------------------------------------------------

def _unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


def fixed_density_points(rng: np.random.Generator, n: int, dim: int, r: float,
                         target_degree: float) -> np.ndarray:
    """Uniform points in a box sized so the expected degree at radius r
    stays constant as n grows."""
    side = (n * _unit_ball_volume(dim) * r ** dim / target_degree) ** (1.0 / dim)
    return rng.uniform(0.0, side, size=(n, dim))


def radius_neighbors_bruteforce(coords: np.ndarray, r: float,
                                chunk: int = 512) -> EdgeList:
    """O(N^2) all-pairs radius graph, used to re-verify the grid output."""
    n = coords.shape[0]
    src_parts, dst_parts = [], []
    for start in range(0, n, chunk):
        rows = coords[start:start + chunk]
        diff = rows[:, None, :] - coords[None, :, :]
        dsq = np.einsum("ijk,ijk->ij", diff, diff)
        s, d = np.nonzero(dsq <= r * r)
        s = s + start
        keep = s != d
        src_parts.append(s[keep])
        dst_parts.append(d[keep])
    src = np.concatenate(src_parts) if src_parts else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    diff = coords[src] - coords[dst]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return EdgeList(src.astype(np.int64), dst.astype(np.int64), dist)


def _same_edges(a: EdgeList, b: EdgeList) -> bool:
    if len(a) != len(b):
        return False
    ka = np.lexsort((a.dst, a.src))
    kb = np.lexsort((b.dst, b.src))
    return (np.array_equal(a.src[ka], b.src[kb])
            and np.array_equal(a.dst[ka], b.dst[kb]))


def bench_topology_scaling(n_points: list[int], dim: int = 4, r: float = 1.0,
                           k: int = 16, target_degree: float = 8.0,
                           n_trials: int = 5, n_warmup: int = 1,
                           seed: int = 0, verify: bool = True) -> list[dict]:
    """Median construction times for radius (grid) vs KNN (brute force).

    Points are drawn at fixed density per n, so radius-graph work per node
    stays constant while brute-force KNN grows with n.  With verify=True
    the grid output is checked against the O(N^2) oracle at every n.
    """
    if list(n_points) != sorted(n_points):
        raise ParameterError("n_points must be increasing")
    rng = np.random.default_rng(seed)
    rows = []
    with _limit_threads():
        for n in n_points:
            coords = fixed_density_points(rng, n, dim, r, target_degree)
            edges = radius_neighbors(coords, r)
            if verify and not _same_edges(edges, radius_neighbors_bruteforce(coords, r)):
                raise EngineError(f"grid and brute-force radius graphs "
                                  f"disagree at n={n}")
            radius_times, knn_times = [], []
            for trial in range(n_warmup + n_trials):
                t0 = time.perf_counter()
                radius_neighbors(coords, r)
                t1 = time.perf_counter()
                if n >= 2:
                    knn_neighbors(coords, k)
                t2 = time.perf_counter()
                if trial >= n_warmup:
                    radius_times.append(t1 - t0)
                    knn_times.append(t2 - t1)
            rows.append({
                "n": int(n),
                "radius_seconds": float(np.median(radius_times)),
                "knn_seconds": float(np.median(knn_times)),
                "mean_degree": neighborhood_stats(edges, n)[0],
            })
    return rows


def write_scaling_csv(rows: list[dict], path):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=("n", "radius_seconds", "knn_seconds", "mean_degree"))
        writer.writeheader()
        writer.writerows(rows)


def write_bench_csv(report: BenchReport, path):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_CSV_FIELDS)
        writer.writeheader()
        writer.writerow(report.to_csv_row())
