"""Binary cross-entropy training with Adam over minibatches of graphs.

A minibatch is the disjoint union of its jets' graphs; topology
construction never crosses jet boundaries.  Validation AUC drives
checkpoint selection and early stopping.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import Tape, backward
from .errors import ContractError, ParameterError
from .metrics import accuracy, roc_auc
from .model import (TaggerConfig, TaggerParams, bind_tagger, build_tagger,
                    named_params, predict_scores, stack_jets, tagger_apply)

SCORE_CLAMP = 1e-7

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_auc", "val_acc",
                  "wall_seconds")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    dropout: float = 0.2
    patience: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be positive, "
                                 f"got {self.learning_rate}")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class TrainResult:
    params: TaggerParams
    model_cfg: TaggerConfig
    train_cfg: TrainConfig
    history: list[dict]
    best_epoch: int
    best_val_auc: float


def bce_loss(score: float, label: int) -> float:
    """-(y ln p + (1-y) ln(1-p)) with p clamped to [1e-7, 1 - 1e-7]."""
    p = min(max(float(score), SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    y = int(label)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


def batch_bce(tape: Tape, scores, labels: np.ndarray):
    """Mean clamped BCE over a (B,1) score Value; differentiable."""
    y = labels.astype(np.float64).reshape(-1, 1)
    p = tape.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    one_minus_p = tape.add(tape.neg(p), 1.0)
    t1 = tape.mul(tape.log(p), y)
    t2 = tape.mul(tape.log(one_minus_p), 1.0 - y)
    return tape.mean_all(tape.neg(tape.add(t1, t2)))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState, cfg: TrainConfig) -> OptimizerState:
    """Bias-corrected Adam update, in place on the parameter arrays."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient for parameter '{name}' "
                                f"at step {state.step}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return state


def train_step(jets, params: TaggerParams, cfg: TaggerConfig,
               named: dict[str, np.ndarray], state: OptimizerState,
               tc: TrainConfig, rng: np.random.Generator) -> float:
    """One forward/backward/update over a batch; returns the batch loss."""
    x, gids = stack_jets(jets)
    labels = np.array([j.label for j in jets])
    tape = Tape()
    bound, leaf_map = bind_tagger(params, tape)
    scores, _ = tagger_apply(tape, tape.leaf(x), gids, len(jets), bound, cfg,
                             training=True, rng=rng, dropout=tc.dropout)
    loss = batch_bce(tape, scores, labels)
    loss_val = float(loss.data)
    grads = backward(tape, loss)
    grad_by_name = {name: grads[v.id] for name, v in leaf_map.items()}
    adam_step(named, grad_by_name, state, tc)
    return loss_val


def evaluate(jets, params: TaggerParams, cfg: TaggerConfig,
             batch_size: int = 256):
    """(mean BCE, AUC, accuracy) on a jet list."""
    scores = predict_scores(jets, params, cfg, batch_size=batch_size)
    labels = np.array([j.label for j in jets])
    loss = float(np.mean([bce_loss(s, l) for s, l in zip(scores, labels)]))
    return loss, roc_auc(scores, labels), accuracy(scores, labels)


def train(train_split, val_split, model_cfg: TaggerConfig, train_cfg: TrainConfig,
          log_fn=None, stop_fn=None) -> TrainResult:
    """Full training loop; deterministic given the seed.

    Keeps the parameters from the best-validation-AUC epoch and stops
    early after ``patience`` epochs without improvement.  ``stop_fn``
    (history row -> bool) can end training once a target is reached.
    """
    if len(train_split.jets) == 0 or len(val_split.jets) == 0:
        raise ContractError("training and validation sets must be nonempty")
    rng = np.random.default_rng(train_cfg.seed)
    params = build_tagger(model_cfg, rng)
    named = dict(named_params(params))
    state = OptimizerState()

    history: list[dict] = []
    best = copy.deepcopy(params)
    best_auc, best_epoch, since_best = -1.0, 0, 0
    n = len(train_split.jets)

    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses, sizes = [], []
        for b, start in enumerate(range(0, n, train_cfg.batch_size)):
            batch = [train_split.jets[i] for i in order[start:start + train_cfg.batch_size]]
            loss = train_step(batch, params, model_cfg, named, state, train_cfg, rng)
            if not math.isfinite(loss):
                raise ContractError(f"loss diverged at epoch {epoch}, batch {b}")
            losses.append(loss)
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes))
        val_loss, val_auc, val_acc = evaluate(val_split.jets, params, model_cfg)
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "val_auc": val_auc, "val_acc": val_acc,
               "wall_seconds": time.perf_counter() - t0}
        history.append(row)
        if log_fn is not None:
            log_fn(row)
        if val_auc > best_auc:
            best_auc, best_epoch, since_best = val_auc, epoch, 0
            best = copy.deepcopy(params)
        else:
            since_best += 1
            if since_best >= train_cfg.patience:
                break
        if stop_fn is not None and stop_fn(row):
            if best_epoch != epoch:
                best, best_epoch, best_auc = copy.deepcopy(params), epoch, val_auc
            break
    return TrainResult(best, model_cfg, train_cfg, history, best_epoch, best_auc)


def write_history_csv(history: list[dict], path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in HISTORY_FIELDS})
