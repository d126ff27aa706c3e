"""Dense float64 tensors with tape-based reverse-mode differentiation.

The primitive set is deliberately small: matmul, add, mul, relu, exp, log,
neg, sigmoid, sum, concat, row L1 norm / L1 row normalization, gather_rows
and its adjoint segment_sum.  That is enough to express MLPs, the two
graph convolutions, pooling and binary cross entropy.

A Tape is single-writer while ops are being recorded; once a forward pass
is finished it is read-only and `backward` may be called.  Independent
graphs use independent tapes, which is how batch-level parallelism is
achieved (no shared mutable state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractError, EngineError, EvaluationError, ParameterError, ShapeError


def as_f64(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (the engine's only dtype)."""
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass(eq=False)
class Value:
    """One tensor on a tape: an id plus its row-major float64 payload."""

    id: int
    data: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.data.shape


class Node(NamedTuple):
    op: str
    inputs: tuple
    out: Value
    aux: tuple


class Tape:
    """Records primitive ops in topological order.

    With ``record=False`` the same code path runs forward-only: no node
    list is kept, intermediates can be garbage collected, and `backward`
    is unavailable.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: list[Node] = []
        self.leaves: dict[int, Value] = {}
        self.gradients: dict[int, np.ndarray] = {}
        self._next_id = 0

    def _new_value(self, data: np.ndarray) -> Value:
        v = Value(self._next_id, data)
        self._next_id += 1
        return v

    def leaf(self, data) -> Value:
        v = self._new_value(as_f64(data))
        self.leaves[v.id] = v
        return v

    def _emit(self, op: str, inputs: tuple, data: np.ndarray, aux: tuple = ()) -> Value:
        # single-reduction screen first; NaN/inf propagate into the sum
        if not np.isfinite(data.sum()) and not np.all(np.isfinite(data)):
            raise EngineError(f"non-finite result produced by op '{op}'")
        out = self._new_value(data)
        if self.record:
            self.nodes.append(Node(op, inputs, out, aux))
        return out

    # ---- primitives ----------------------------------------------------

    def matmul(self, a: Value, b: Value) -> Value:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shapes do not chain: {a.shape} @ {b.shape}")
        return self._emit("matmul", (a, b), a.data @ b.data)

    def add(self, a: Value, b) -> Value:
        """a + b where b is a Value, a constant array, or a python scalar.

        Broadcasting is limited to a trailing bias row: (N,F) + (F,) or (1,F).
        """
        if isinstance(b, Value):
            bd = b.data
            if not (a.shape == bd.shape or _bias_broadcast(a.shape, bd.shape)):
                raise ShapeError(f"add shapes incompatible: {a.shape} + {bd.shape}")
            return self._emit("add", (a, b), a.data + bd)
        return self._emit("add_const", (a,), a.data + b, (b,))

    def sub(self, a: Value, b) -> Value:
        if isinstance(b, Value):
            return self.add(a, self.neg(b))
        return self.add(a, -b)

    def mul(self, a: Value, b) -> Value:
        """Elementwise a * b.

        b may be a Value of equal shape, an (N,1) column against (N,F) rows
        (either operand), a constant array, or a python scalar.
        """
        if isinstance(b, Value):
            if not (a.shape == b.shape or _col_broadcast(a.shape, b.shape)
                    or _col_broadcast(b.shape, a.shape)):
                raise ShapeError(f"mul shapes incompatible: {a.shape} * {b.shape}")
            return self._emit("mul", (a, b), a.data * b.data)
        return self._emit("mul_const", (a,), a.data * b, (b,))

    def scale(self, a: Value, c: float) -> Value:
        return self.mul(a, float(c))

    def neg(self, a: Value) -> Value:
        return self._emit("neg", (a,), -a.data)

    def relu(self, a: Value) -> Value:
        return self._emit("relu", (a,), np.maximum(a.data, 0.0))

    def exp(self, a: Value) -> Value:
        return self._emit("exp", (a,), np.exp(a.data))

    def log(self, a: Value) -> Value:
        return self._emit("log", (a,), np.log(a.data))

    def sigmoid(self, a: Value) -> Value:
        return self._emit("sigmoid", (a,), _sigmoid(a.data))

    def sum(self, a: Value, axis: int | None = None) -> Value:
        if axis is None:
            data = np.sum(a.data)
        elif axis in (0, 1):
            data = np.sum(a.data, axis=axis, keepdims=True)
        else:
            raise ParameterError(f"sum axis must be None, 0 or 1, got {axis}")
        return self._emit("sum", (a,), np.asarray(data), (axis, a.shape))

    def concat(self, a: Value, b: Value, axis: int = 1) -> Value:
        if axis not in (0, 1):
            raise ParameterError(f"concat axis must be 0 or 1, got {axis}")
        return self._emit("concat", (a, b), np.concatenate([a.data, b.data], axis=axis),
                          (axis, a.shape[axis]))

    def l1norm_rows(self, a: Value) -> Value:
        """Row-wise L1 norms, shape (N,1)."""
        return self._emit("l1norm_rows", (a,),
                          np.sum(np.abs(a.data), axis=1, keepdims=True))

    def l1_normalize_rows(self, a: Value, eps: float = 1e-12) -> Value:
        """Each row divided by (its L1 norm + eps); zero rows stay zero."""
        norms = np.sum(np.abs(a.data), axis=1, keepdims=True)
        out = a.data / (norms + eps)
        return self._emit("l1_normalize_rows", (a,), out, (norms + eps,))

    def gather_rows(self, a: Value, idx: np.ndarray) -> Value:
        idx = np.asarray(idx, dtype=np.int64)
        return self._emit("gather_rows", (a,), a.data[idx], (idx, a.shape[0]))

    def segment_sum(self, a: Value, seg: np.ndarray, n: int) -> Value:
        """Scatter-add rows of a into n output rows keyed by seg."""
        seg = np.asarray(seg, dtype=np.int64)
        if len(seg) != a.shape[0]:
            raise ShapeError(f"segment ids {seg.shape} do not match rows {a.shape}")
        return self._emit("segment_sum", (a,), _segment_sum(a.data, seg, n), (seg,))

    # ---- compositions ---------------------------------------------------

    def clamp(self, a: Value, lo: float, hi: float) -> Value:
        # max(min(a, hi), lo) built from relu so gradients cut off outside.
        capped = self.sub(a, self.relu(self.add(a, -hi)))
        return self.add(capped, self.relu(self.neg(self.add(capped, -lo))))

    def mean_all(self, a: Value) -> Value:
        return self.scale(self.sum(a), 1.0 / a.data.size)


def _bias_broadcast(a_shape, b_shape) -> bool:
    if len(a_shape) != 2:
        return False
    return b_shape == (a_shape[1],) or b_shape == (1, a_shape[1])


def _col_broadcast(col_shape, full_shape) -> bool:
    return (len(col_shape) == 2 and len(full_shape) == 2
            and col_shape == (full_shape[0], 1) and full_shape[1] >= 1)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _segment_sum(vals: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + vals.shape[1:], dtype=np.float64)
    if len(seg) == 0:
        return out
    if not np.all(np.diff(seg) >= 0):
        # sort into contiguous segments; reduceat beats ufunc.at
        order = np.argsort(seg, kind="stable")
        seg, vals = seg[order], vals[order]
    counts = np.bincount(seg, minlength=n)
    nonempty = counts > 0
    starts = (np.cumsum(counts) - counts)[nonempty]
    out[nonempty] = np.add.reduceat(vals, starts, axis=0)
    return out


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (undo the limited broadcasts used in forward)."""
    if g.shape == shape:
        return g
    if shape == (g.shape[1],):
        return np.sum(g, axis=0)
    if shape == (1, g.shape[1]):
        return np.sum(g, axis=0, keepdims=True)
    if shape == (g.shape[0], 1):
        return np.sum(g, axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


# One VJP per primitive: node, upstream gradient -> per-input gradients.
_VJP: dict[str, Callable] = {}


def _vjp(name):
    def deco(fn):
        _VJP[name] = fn
        return fn
    return deco


@_vjp("matmul")
def _(node, g):
    a, b = node.inputs
    return g @ b.data.T, a.data.T @ g


@_vjp("add")
def _(node, g):
    a, b = node.inputs
    return g, _reduce_to(g, b.data.shape)


@_vjp("add_const")
def _(node, g):
    return (g,)


@_vjp("mul")
def _(node, g):
    a, b = node.inputs

    def grad_for(this, other):
        if this.data.shape == g.shape:
            return g * other.data
        # column operand of a (N,1)x(N,F) broadcast: fused row reduction
        return np.einsum("ij,ij->i", g, other.data)[:, None]

    return grad_for(a, b), grad_for(b, a)


@_vjp("mul_const")
def _(node, g):
    (c,) = node.aux
    return (g * c,)


@_vjp("neg")
def _(node, g):
    return (-g,)


@_vjp("relu")
def _(node, g):
    (a,) = node.inputs
    return (g * (a.data > 0),)


@_vjp("exp")
def _(node, g):
    return (g * node.out.data,)


@_vjp("log")
def _(node, g):
    (a,) = node.inputs
    return (g / a.data,)


@_vjp("sigmoid")
def _(node, g):
    y = node.out.data
    return (g * y * (1.0 - y),)


@_vjp("sum")
def _(node, g):
    axis, in_shape = node.aux
    return (np.broadcast_to(g, in_shape).copy(),)


@_vjp("concat")
def _(node, g):
    axis, split = node.aux
    if axis == 0:
        return g[:split], g[split:]
    return g[:, :split], g[:, split:]


@_vjp("l1norm_rows")
def _(node, g):
    (a,) = node.inputs
    return (g * np.sign(a.data),)


@_vjp("l1_normalize_rows")
def _(node, g):
    (a,) = node.inputs
    (denom,) = node.aux
    inner = np.sum(g * node.out.data, axis=1, keepdims=True)
    return ((g - np.sign(a.data) * inner) / denom,)


@_vjp("gather_rows")
def _(node, g):
    idx, n = node.aux
    return (_segment_sum(g, idx, n),)


@_vjp("segment_sum")
def _(node, g):
    (seg,) = node.aux
    return (g[seg],)


def backward(tape: Tape, loss) -> dict[int, np.ndarray]:
    """Gradient of a scalar loss w.r.t. every value that feeds it.

    Returns a map from value id to gradient array.  Every leaf on the tape
    gets an entry; leaves that do not reach the loss get zeros.
    """
    if not tape.record:
        raise ContractError("backward requires a recording tape")
    loss_id = loss.id if isinstance(loss, Value) else int(loss)
    by_id = {n.out.id: n for n in tape.nodes}
    seed = by_id[loss_id].out if loss_id in by_id else tape.leaves.get(loss_id)
    if seed is None:
        raise ContractError(f"value id {loss_id} was not recorded on this tape")
    if seed.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {seed.data.shape}")

    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(seed.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out.id)
        if g is None:
            continue
        for v, gv in zip(node.inputs, _VJP[node.op](node, g)):
            if v.id in grads:
                grads[v.id] = grads[v.id] + gv
            else:
                grads[v.id] = gv
    for lid, leaf in tape.leaves.items():
        if lid not in grads:
            grads[lid] = np.zeros_like(leaf.data)
    tape.gradients = grads
    return grads


def finite_diff_check(f, params: dict[str, np.ndarray], step: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, values)`` must build a scalar Value from the dict of leaves
    it is given.  Relative error is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-12), maximized over all entries.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")

    tape = Tape()
    values = {k: tape.leaf(v) for k, v in params.items()}
    loss = f(tape, values)
    if not np.all(np.isfinite(loss.data)):
        raise EvaluationError("objective returned a non-finite value")
    grads = backward(tape, loss)

    def eval_at(arrays: dict[str, np.ndarray]) -> float:
        t = Tape(record=False)
        vals = {k: t.leaf(v) for k, v in arrays.items()}
        out = f(t, vals).data
        if not np.all(np.isfinite(out)):
            raise EvaluationError("objective returned a non-finite value")
        return float(np.sum(out))

    worst = 0.0
    work = {k: v.astype(np.float64).copy() for k, v in params.items()}
    for name, arr in work.items():
        analytic = grads[values[name].id]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = eval_at(work)
            flat[i] = orig - step
            down = eval_at(work)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
