"""Neighborhood construction in the learned embedding space.

Point sets are plain (N, D) float64 arrays.  Two constructions are
provided: fixed-radius graphs via a uniform grid with cell size r (each
node only ever compares against its 3^D surrounding cells), and brute
force k-nearest-neighbor graphs as the baseline, which requires per-node
sorting and scales as O(N^2).

Edges are directed: entry k means node src[k] has neighbor dst[k] at
distance dist[k].  Both constructions exclude self edges and emit edges
grouped by source node in a deterministic order, so downstream
aggregation is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError

MAX_GRID_DIM = 6  # keeps the 3^D cell scan small


@dataclass
class EdgeList:
    src: np.ndarray
    dst: np.ndarray
    dist: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    @staticmethod
    def empty() -> "EdgeList":
        return EdgeList(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
                        np.empty(0, dtype=np.float64))


@dataclass
class GridIndex:
    """Complete partition of a point set into cubic cells.

    Cell of a node is floor(coord / cell_size) per axis; every node lives
    in exactly one cell.  Immutable after construction.
    """

    cell_size: float
    cells: dict[tuple, list[int]] = field(default_factory=dict)


def _check_coords(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise InputError(f"expected (N, D) coordinates, got shape {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise InputError("coordinates contain non-finite values")
    return coords


def build_grid(coords: np.ndarray, cell_size: float) -> GridIndex:
    if cell_size <= 0:
        raise ParameterError(f"cell_size must be positive, got {cell_size}")
    coords = _check_coords(coords)
    index = GridIndex(cell_size)
    cell_of = np.floor(coords / cell_size).astype(np.int64)
    for i, cell in enumerate(cell_of):
        index.cells.setdefault(tuple(cell), []).append(i)
    return index


CANDIDATE_CHUNK = 131072  # caps transient buffers in the grid join


def radius_neighbors(coords: np.ndarray, r: float, batch: np.ndarray | None = None,
                     max_degree: int | None = None) -> EdgeList:
    """All directed pairs (i -> j), i != j, with |coords_i - coords_j| <= r.

    Uses the uniform grid with cell size r, so each node is compared only
    against candidates from its 3^D neighboring cells.  When ``batch``
    (a node -> graph id map) is given, the graph id becomes part of the
    cell key and edges never cross graph boundaries.  ``max_degree``
    optionally keeps only the nearest edges per node (ties by lower
    neighbor index) to guard against adversarial density.
    """
    if r <= 0:
        raise ParameterError(f"radius must be positive, got {r}")
    coords = _check_coords(coords)
    n, dim = coords.shape
    if dim > MAX_GRID_DIM:
        raise ParameterError(f"embedding dim {dim} exceeds grid limit {MAX_GRID_DIM}")
    if n < 2:
        return EdgeList.empty()

    cells = np.floor(coords / r).astype(np.int64)
    if batch is not None:
        batch = np.asarray(batch, dtype=np.int64)
        cells = np.concatenate([batch[:, None], cells], axis=1)

    # Mixed-radix encode with one cell of padding per axis so +-1 offsets
    # never wrap into a neighboring digit.
    shifted = cells - cells.min(axis=0) + 1
    radix = shifted.max(axis=0) + 2
    if batch is not None:
        radix[0] = shifted[:, 0].max() + 1  # graph axis takes no offsets
    strides = np.ones(len(radix), dtype=np.int64)
    for axis in range(len(radix) - 2, -1, -1):
        strides[axis] = strides[axis + 1] * radix[axis + 1]
    if np.log2(float(radix[0])) + np.log2(float(strides[0])) > 62:
        raise InputError("coordinate spread too large for the grid encoding")
    keys = shifted @ strides

    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    uniq_keys, seg_starts = np.unique(sorted_keys, return_index=True)
    counts = np.append(seg_starts[1:], n) - seg_starts
    n_cells = len(uniq_keys)

    # Offsets over the coordinate axes only: zero plus the lexicographically
    # positive half; each cross-cell pair is found once and mirrored.
    coord_strides = strides[1:] if batch is not None else strides
    offsets = _half_offsets(dim)
    deltas = offsets @ coord_strides
    zero_row = int(np.flatnonzero(deltas == 0)[0])

    # join occupied cells against their offset images
    targets = (uniq_keys[None, :] + deltas[:, None]).ravel()
    match = np.searchsorted(uniq_keys, targets)
    match_c = np.minimum(match, n_cells - 1)
    hit = np.flatnonzero(uniq_keys[match_c] == targets)
    cell_a = hit % n_cells
    cell_b = match_c[hit]
    from_zero_pair = (hit // n_cells) == zero_row

    axes = [np.ascontiguousarray(coords[:, a]) for a in range(dim)]
    src_parts, dst_parts, dsq_parts = [], [], []
    r_sq = r * r
    pair_sizes = counts[cell_a] * counts[cell_b]
    for start, stop in _chunk_ranges(pair_sizes, CANDIDATE_CHUNK):
        pair, local = _expand_sizes(pair_sizes[start:stop])
        if len(pair) == 0:
            continue
        pair = pair + start
        cb = counts[cell_b[pair]]
        a_off = local // cb
        b_off = local - a_off * cb
        cand_src = order[seg_starts[cell_a[pair]] + a_off]
        cand_dst = order[seg_starts[cell_b[pair]] + b_off]
        from_zero = from_zero_pair[pair]
        keep = ~(from_zero & (cand_src == cand_dst))
        cand_src, cand_dst, from_zero = cand_src[keep], cand_dst[keep], from_zero[keep]

        dsq = np.zeros(len(cand_src))
        for ax in axes:
            diff = ax[cand_src] - ax[cand_dst]
            dsq += diff * diff
        within = dsq <= r_sq
        cand_src, cand_dst = cand_src[within], cand_dst[within]
        dsq, from_zero = dsq[within], from_zero[within]
        src_parts.append(cand_src)
        dst_parts.append(cand_dst)
        dsq_parts.append(dsq)
        mirror = ~from_zero
        if np.any(mirror):
            src_parts.append(cand_dst[mirror])
            dst_parts.append(cand_src[mirror])
            dsq_parts.append(dsq[mirror])

    if not src_parts:
        return EdgeList.empty()
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    dist = np.sqrt(np.concatenate(dsq_parts))
    by_src = np.argsort(src, kind="stable")
    edges = EdgeList(src[by_src], dst[by_src], dist[by_src])
    if max_degree is not None:
        edges = _cap_degree(edges, max_degree)
    return edges


def _chunk_ranges(counts: np.ndarray, budget: int):
    """Split the range [0, len(counts)) so each piece holds <= budget items
    (single oversized entries get their own piece)."""
    if int(counts.sum()) == 0:
        return
    cum = np.cumsum(counts)
    start = 0
    while start < len(counts):
        prev = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, prev + budget, side="right"))
        stop = max(stop, start + 1)
        yield start, min(stop, len(counts))
        start = stop


def _half_offsets(dim: int) -> np.ndarray:
    grids = np.meshgrid(*([np.array([-1, 0, 1])] * dim), indexing="ij")
    all_offsets = np.stack([g.ravel() for g in grids], axis=1)
    keep = [np.all(o == 0) or _lex_positive(o) for o in all_offsets]
    return all_offsets[keep]


def _lex_positive(off: np.ndarray) -> bool:
    for v in off:
        if v > 0:
            return True
        if v < 0:
            return False
    return False


def _expand_sizes(sizes: np.ndarray):
    """(group index, within-group offset) pairs for variable-size groups."""
    total = int(sizes.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    group = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
    block_starts = np.cumsum(sizes) - sizes
    local = np.arange(total, dtype=np.int64) - np.repeat(block_starts, sizes)
    return group, local


def _cap_degree(edges: EdgeList, max_degree: int) -> EdgeList:
    if max_degree < 0:
        raise ParameterError(f"max_degree must be >= 0, got {max_degree}")
    order = np.lexsort((edges.dst, edges.dist, edges.src))
    src = edges.src[order]
    first = np.searchsorted(src, src, side="left")
    rank = np.arange(len(src)) - first
    keep = order[rank < max_degree]
    keep.sort()
    return EdgeList(edges.src[keep], edges.dst[keep], edges.dist[keep])


def knn_neighbors(coords: np.ndarray, k: int, batch: np.ndarray | None = None,
                  chunk: int = 128) -> EdgeList:
    """For each node, edges to its k nearest neighbors (self excluded).

    Brute force: all pairwise distances per node, ties broken by lower
    neighbor index.  k clamps to N-1 within each graph.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    coords = _check_coords(coords)
    n = coords.shape[0]
    if n < 2:
        return EdgeList.empty()
    if batch is None:
        src, dst = _knn_block(coords, k, chunk)
    else:
        batch = np.asarray(batch, dtype=np.int64)
        src_parts, dst_parts = [], []
        for gid in np.unique(batch):
            members = np.flatnonzero(batch == gid)
            if len(members) < 2:
                continue
            s, d = _knn_block(coords[members], k, chunk)
            src_parts.append(members[s])
            dst_parts.append(members[d])
        if not src_parts:
            return EdgeList.empty()
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
    diff = coords[src] - coords[dst]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return EdgeList(src, dst, dist)


def _knn_block(coords: np.ndarray, k: int, chunk: int = 128):
    n = coords.shape[0]
    k = min(k, n - 1)
    if n <= 512:
        # small graph: one full distance matrix, one stable row sort
        diff = coords[:, None, :] - coords[None, :, :]
        dsq = np.einsum("ijk,ijk->ij", diff, diff)
        np.fill_diagonal(dsq, np.inf)
        nearest = np.argsort(dsq, axis=1, kind="stable")[:, :k]
        src = np.repeat(np.arange(n, dtype=np.int64), k)
        return src, nearest.reshape(-1)
    dst = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        rows = coords[start:start + chunk]
        diff = rows[:, None, :] - coords[None, :, :]
        dsq = np.einsum("ijk,ijk->ij", diff, diff)
        m = dsq.shape[0]
        dsq[np.arange(m), np.arange(start, start + m)] = np.inf
        part = np.argpartition(dsq, k - 1, axis=1)[:, :k]
        boundary = dsq[np.arange(m)[:, None], part].max(axis=1)
        # rows with distance ties at the boundary need index tie-breaking
        ties = np.flatnonzero((dsq <= boundary[:, None]).sum(axis=1) > k)
        dst[start:start + m] = part
        for i in ties:
            cand = np.flatnonzero(dsq[i] <= boundary[i])
            dst[start + i] = cand[np.lexsort((cand, dsq[i][cand]))][:k]
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    return src, dst.reshape(-1)


def neighborhood_stats(edges: EdgeList, n_nodes: int):
    """(mean degree, max degree, degree histogram); isolated nodes count 0."""
    if len(edges) and (edges.src.max() >= n_nodes or edges.dst.max() >= n_nodes):
        raise InputError("edge indices exceed n_nodes")
    degrees = np.bincount(edges.src, minlength=n_nodes) if n_nodes else np.zeros(0, int)
    mean = len(edges) / n_nodes if n_nodes else 0.0
    max_deg = int(degrees.max()) if n_nodes else 0
    hist = np.bincount(degrees) if n_nodes else np.zeros(0, int)
    return mean, max_deg, hist
