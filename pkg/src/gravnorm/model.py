"""Jet tagger: encoder, a stack of conv blocks, mean pooling, sigmoid head."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .conv import GravLayerParams, NodeBlock, gravnet_conv, gravnetnorm_conv
from .engine import Tape, Value
from .errors import ContractError, InputError, ParameterError
from .mlp import (MlpParams, bind_mlp, init_mlp, mlp_forward, mlp_param_count,
                  named_mlp_arrays)
from .spatial import EdgeList

CHECKPOINT_FORMAT = "gravnorm-ckpt-v1"

VARIANTS = ("norm", "original")


@dataclass
class BlockConfig:
    s_dim: int = 4
    h_dim: int = 22
    out_dim: int = 48
    hidden: int = 64
    g: float = 3.0
    r: float = 1.0
    k: int = 16


@dataclass
class TaggerConfig:
    variant: str = "norm"
    in_features: int = 7
    encoder: list[int] = field(default_factory=lambda: [64])  # [] -> identity
    blocks: list[BlockConfig] = field(default_factory=lambda: [BlockConfig() for _ in range(3)])
    head: list[int] = field(default_factory=lambda: [64])
    dropout: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if len(self.blocks) < 1:
            raise ParameterError("need at least one conv block")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class TaggerParams:
    encoder: MlpParams | None
    blocks: list[GravLayerParams]
    head: MlpParams


def build_tagger(cfg: TaggerConfig, rng: np.random.Generator) -> TaggerParams:
    encoder = None
    width = cfg.in_features
    if cfg.encoder:
        encoder = init_mlp(rng, [cfg.in_features] + list(cfg.encoder),
                           final_activation="relu")
        width = cfg.encoder[-1]
    blocks = []
    for bc in cfg.blocks:
        # pairwise distances ignore uniform shifts of the embedding, so bias
        # directions in the coordinate MLP are unlearnable dead weight
        blocks.append(GravLayerParams(
            s_mlp=init_mlp(rng, [width, bc.hidden, bc.s_dim], bias=False),
            h_mlp=init_mlp(rng, [width, bc.hidden, bc.h_dim]),
            out_mlp=init_mlp(rng, [width + bc.h_dim, bc.hidden, bc.out_dim],
                             final_activation="relu"),
            g=bc.g, r=bc.r))
        width = bc.out_dim
    head = init_mlp(rng, [width] + list(cfg.head) + [1])
    return TaggerParams(encoder, blocks, head)


def named_params(params: TaggerParams):
    """Stable (name, array) iteration over every weight and bias."""
    if params.encoder is not None:
        yield from named_mlp_arrays(params.encoder, "encoder")
    for i, blk in enumerate(params.blocks):
        yield from named_mlp_arrays(blk.s_mlp, f"block{i}.s")
        yield from named_mlp_arrays(blk.h_mlp, f"block{i}.h")
        yield from named_mlp_arrays(blk.out_mlp, f"block{i}.out")
    yield from named_mlp_arrays(params.head, "head")


def param_count(params: TaggerParams) -> int:
    total = mlp_param_count(params.encoder) if params.encoder is not None else 0
    total += sum(mlp_param_count(b.s_mlp) + mlp_param_count(b.h_mlp)
                 + mlp_param_count(b.out_mlp) for b in params.blocks)
    return total + mlp_param_count(params.head)


def bind_tagger(params: TaggerParams, tape: Tape):
    """Leaf-register all parameters; returns (bound params, name -> Value)."""
    leaf_map: dict[str, Value] = {}
    encoder = None
    if params.encoder is not None:
        encoder = bind_mlp(params.encoder, tape, "encoder", leaf_map)
    blocks = []
    for i, blk in enumerate(params.blocks):
        blocks.append(GravLayerParams(
            s_mlp=bind_mlp(blk.s_mlp, tape, f"block{i}.s", leaf_map),
            h_mlp=bind_mlp(blk.h_mlp, tape, f"block{i}.h", leaf_map),
            out_mlp=bind_mlp(blk.out_mlp, tape, f"block{i}.out", leaf_map),
            g=blk.g, r=blk.r))
    head = bind_mlp(params.head, tape, "head", leaf_map)
    return TaggerParams(encoder, blocks, head), leaf_map


def tagger_apply(tape: Tape, x: Value, graph_ids: np.ndarray, n_graphs: int,
                 params: TaggerParams, cfg: TaggerConfig, training: bool = False,
                 rng: np.random.Generator | None = None, dropout: float | None = None,
                 frozen_topology: list[EdgeList] | None = None,
                 timing: dict | None = None):
    """Batched forward over a disjoint union of graphs.

    graph_ids maps node row -> graph index (must be sorted ascending so
    pooling segments are contiguous).  Returns (scores Value of shape
    (n_graphs, 1), per-layer EdgeLists).
    """
    rate = (cfg.dropout if dropout is None else dropout) if training else 0.0
    if rate > 0.0 and rng is None:
        raise ContractError("training with dropout requires an rng")

    h = x
    if params.encoder is not None:
        h = mlp_forward(params.encoder, h, tape, dropout=rate, rng=rng)

    block = NodeBlock(h)
    edge_lists: list[EdgeList] = []
    for i, (blk, bc) in enumerate(zip(params.blocks, cfg.blocks)):
        frozen = frozen_topology[i] if frozen_topology is not None else None
        if cfg.variant == "norm":
            block, edges = gravnetnorm_conv(block, blk, tape, batch=graph_ids,
                                            frozen_edges=frozen, dropout=rate,
                                            rng=rng, timing=timing)
        else:
            block, edges = gravnet_conv(block, blk, bc.k, tape, batch=graph_ids,
                                        frozen_edges=frozen, dropout=rate,
                                        rng=rng, timing=timing)
        edge_lists.append(edges)

    counts = np.bincount(graph_ids, minlength=n_graphs).astype(np.float64)
    if np.any(counts == 0):
        raise InputError("every graph in the batch needs at least one node")
    pooled = tape.mul(tape.segment_sum(block.features, graph_ids, n_graphs),
                      1.0 / counts[:, None])
    logits = mlp_forward(params.head, pooled, tape, dropout=rate, rng=rng)
    return tape.sigmoid(logits), edge_lists


def tagger_forward(jet, params: TaggerParams, cfg: TaggerConfig,
                   training: bool = False, rng: np.random.Generator | None = None):
    """Score a single jet; returns (score in (0,1), per-layer EdgeLists)."""
    feats = np.asarray(jet.features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise InputError("jet must contain at least one node")
    tape = Tape(record=False)
    x = tape.leaf(feats)
    gids = np.zeros(feats.shape[0], dtype=np.int64)
    scores, edge_lists = tagger_apply(tape, x, gids, 1, params, cfg,
                                      training=training, rng=rng)
    return float(scores.data[0, 0]), edge_lists


def predict_scores(jets, params: TaggerParams, cfg: TaggerConfig,
                   batch_size: int = 256) -> np.ndarray:
    """Inference scores for a list of jets, batched as disjoint graphs."""
    out = np.empty(len(jets))
    for start in range(0, len(jets), batch_size):
        chunk = jets[start:start + batch_size]
        x, gids = stack_jets(chunk)
        tape = Tape(record=False)
        scores, _ = tagger_apply(tape, tape.leaf(x), gids, len(chunk), params, cfg)
        out[start:start + len(chunk)] = scores.data[:, 0]
    return out


def stack_jets(jets):
    """Concatenate jet features into one disjoint graph with a node->graph map."""
    x = np.concatenate([np.asarray(j.features, dtype=np.float64) for j in jets], axis=0)
    gids = np.concatenate([np.full(len(j.features), i, dtype=np.int64)
                           for i, j in enumerate(jets)])
    return x, gids


# ---- checkpointing -------------------------------------------------------

def save_checkpoint(path, params: TaggerParams, cfg: TaggerConfig, seed: int):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "seed": int(seed),
        "config": asdict(cfg),
        "weights": {
            name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
            for name, arr in named_params(params)
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Returns (params, cfg, seed).  Rejects unknown format tags."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(
            f"unsupported checkpoint format {doc.get('format')!r}, "
            f"expected {CHECKPOINT_FORMAT!r}")
    cfg_dict = dict(doc["config"])
    cfg_dict["blocks"] = [BlockConfig(**b) for b in cfg_dict["blocks"]]
    cfg = TaggerConfig(**cfg_dict)
    params = build_tagger(cfg, np.random.default_rng(0))
    weights = doc["weights"]
    loaded = copy.deepcopy(params)
    for name, arr in named_params(loaded):
        entry = weights[name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != arr.shape:
            raise ContractError(f"checkpoint weight {name} has shape "
                                f"{data.shape}, expected {arr.shape}")
        arr[...] = data
    return loaded, cfg, doc["seed"]
