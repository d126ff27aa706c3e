"""Message-passing layers with attention tied to a learned embedding space.

Each layer learns two latent spaces from its input features: embedding
coordinates s (three small MLPs run row-wise) that define the topology and
the pair distances, and hidden features h that are carried along edges.

Two variants:

* ``gravnet_conv`` -- the original rule: k-nearest-neighbor topology in s,
  edge weight |h_j|_L1 * exp(-G d^2), so both nearness and the neighbor's
  feature size control influence.
* ``gravnetnorm_conv`` -- hidden features are L1-normalized before
  aggregation and the weight exp(-G d^2 / r^2) depends on distance alone,
  which lets a radius graph (radius r, rebuilt every layer) carry all the
  attention.  Anything outside the radius would have weight < exp(-G).

Graph membership is a non-differentiable selection; gradients flow through
the distances of the included edges.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .engine import Tape, Value, as_f64
from .errors import ContractError, ParameterError
from .mlp import MlpParams, mlp_forward
from .spatial import EdgeList, knn_neighbors, radius_neighbors

L1_EPS = 1e-12


@dataclass
class GravLayerParams:
    """Weights of one conv block plus its attention hyperparameters."""

    s_mlp: MlpParams   # input -> embedding coords
    h_mlp: MlpParams   # input -> hidden features
    out_mlp: MlpParams  # concat(input, aggregate) -> output features
    g: float = 3.0
    r: float = 1.0

    def __post_init__(self):
        if self.g <= 0:
            raise ParameterError(f"G must be positive, got {self.g}")
        if self.r <= 0:
            raise ParameterError(f"radius must be positive, got {self.r}")


@dataclass
class NodeBlock:
    features: Value


def l1_normalize(h: np.ndarray) -> np.ndarray:
    """Rows divided by (their L1 norm + eps); all-zero rows stay zero."""
    h = as_f64(h)
    norms = np.sum(np.abs(h), axis=1, keepdims=True)
    return h / (norms + L1_EPS)


def attention_norm(d: float, g: float, r: float) -> float:
    """Distance-only edge weight exp(-G d^2 / r^2), in (0, 1]."""
    return math.exp(-g * d * d / (r * r))


def attention_orig(d: float, g: float, h_neighbor: np.ndarray) -> float:
    """Original edge weight |h_j|_L1 * exp(-G d^2)."""
    return float(np.sum(np.abs(h_neighbor))) * math.exp(-g * d * d)


def pair_distance_sq(tape: Tape, s: Value, edges: EdgeList) -> Value:
    """Per-edge squared L2 distance in the embedding, differentiable in s."""
    diff = tape.sub(tape.gather_rows(s, edges.src), tape.gather_rows(s, edges.dst))
    return tape.sum(tape.mul(diff, diff), axis=1)


def norm_edge_weights(tape: Tape, s: Value, edges: EdgeList, g: float, r: float) -> Value:
    dsq = pair_distance_sq(tape, s, edges)
    return tape.exp(tape.neg(tape.scale(dsq, g / (r * r))))


def orig_edge_weights(tape: Tape, s: Value, h: Value, edges: EdgeList, g: float) -> Value:
    dsq = pair_distance_sq(tape, s, edges)
    decay = tape.exp(tape.neg(tape.scale(dsq, g)))
    sizes = tape.gather_rows(tape.l1norm_rows(h), edges.dst)
    return tape.mul(sizes, decay)


def _conv(block: NodeBlock, params: GravLayerParams, tape: Tape, variant: str,
          k: int | None, batch, frozen_edges, dropout, rng, timing):
    x = block.features
    if x.data.shape[0] < 1:
        raise ContractError("node block is empty")
    n = x.data.shape[0]

    s = mlp_forward(params.s_mlp, x, tape, dropout=dropout, rng=rng)
    h = mlp_forward(params.h_mlp, x, tape, dropout=dropout, rng=rng)
    hhat = tape.l1_normalize_rows(h, eps=L1_EPS)

    if frozen_edges is not None:
        edges = frozen_edges
    else:
        t0 = time.perf_counter()
        if variant == "norm":
            edges = radius_neighbors(s.data, params.r, batch=batch)
        else:
            edges = knn_neighbors(s.data, k, batch=batch)
        if timing is not None:
            timing["topology_s"] = timing.get("topology_s", 0.0) + time.perf_counter() - t0

    if len(edges):
        if variant == "norm":
            w = norm_edge_weights(tape, s, edges, params.g, params.r)
        else:
            w = orig_edge_weights(tape, s, h, edges, params.g)
        messages = tape.mul(tape.gather_rows(hhat, edges.dst), w)
        aggregate = tape.segment_sum(messages, edges.src, n)
    else:
        aggregate = tape.leaf(np.zeros((n, params.h_mlp.out_dim())))

    out = mlp_forward(params.out_mlp, tape.concat(x, aggregate, axis=1), tape,
                      dropout=dropout, rng=rng)
    return NodeBlock(out), edges


def gravnetnorm_conv(block: NodeBlock, params: GravLayerParams, tape: Tape,
                     batch: np.ndarray | None = None,
                     frozen_edges: EdgeList | None = None,
                     dropout: float = 0.0, rng=None, timing: dict | None = None):
    """Radius-graph topology, distance-only attention on normalized features.

    Returns (NodeBlock, EdgeList); the edge list is surfaced because
    neighborhood sizes are a first-class output of this layer.
    """
    return _conv(block, params, tape, "norm", None, batch, frozen_edges,
                 dropout, rng, timing)


def gravnet_conv(block: NodeBlock, params: GravLayerParams, k: int, tape: Tape,
                 batch: np.ndarray | None = None,
                 frozen_edges: EdgeList | None = None,
                 dropout: float = 0.0, rng=None, timing: dict | None = None):
    """KNN topology with size-times-distance attention (the original rule)."""
    if k is not None and k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    return _conv(block, params, tape, "original", k, batch, frozen_edges,
                 dropout, rng, timing)
