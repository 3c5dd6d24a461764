"""Dense float64 matrices with a tape-based reverse-mode gradient.

Every value is a 2-D ``numpy`` array; a vector is a single row and a batch of
vectors is a stack of rows. Operations accept :class:`Var` objects or plain
array-likes. A ``Var`` that belongs to a :class:`Tape` records each operation
applied to it, and :meth:`Tape.backward` replays that record in reverse.
Operations on tape-less values just compute, which is how sampling and
evaluation run without paying for gradient bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgument, ShapeError

DTYPE = np.float64


class Var:
    """A matrix value, optionally recorded on a tape."""

    __slots__ = ("value", "grad", "tape", "parents", "backward_fn", "name")

    def __init__(self, value, tape=None, parents=(), backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.shape}{tag}, on_tape={self.tape is not None})"


class Tape:
    """Ordered record of the operations applied to its variables.

    Nodes are appended as they are created, so the list is already in
    topological order and a reversed walk is a valid backward schedule.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def param(self, value, name=None) -> Var:
        var = Var(as_matrix(value), tape=self, name=name)
        self.nodes.append(var)
        return var

    def bind(self, arrays: Mapping[str, np.ndarray]) -> dict[str, Var]:
        """Register every named array as a differentiable leaf."""
        return {name: self.param(arr, name=name) for name, arr in arrays.items()}

    def record(self, value, parents, backward_fn) -> Var:
        var = Var(value, tape=self, parents=parents, backward_fn=backward_fn)
        self.nodes.append(var)
        return var

    def backward(self, loss: Var) -> None:
        """Accumulate gradients of ``loss``; a constant loss (no tape) leaves all gradients zero."""
        if loss.tape is not None and loss.tape is not self:
            raise InvalidArgument("loss is not recorded on this tape")
        if loss.value.size != 1:
            raise InvalidArgument(f"loss must be a scalar, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
        if loss.tape is None:
            return
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None or parent.tape is not self:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def backward(tape: Tape, loss: Var, params: Mapping[str, Var] | None = None) -> dict[str, np.ndarray]:
    """Run the backward pass and collect gradients of the named leaves.

    Leaves that the loss does not reach get an all-zero gradient.
    """
    tape.backward(loss)
    if params is None:
        params = {n.name: n for n in tape.nodes if n.name is not None}
    return {
        name: var.grad if var.grad is not None else np.zeros_like(var.value)
        for name, var in params.items()
    }


def as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


def lift(x) -> Var:
    return x if isinstance(x, Var) else Var(as_matrix(x))


def _tape_of(parents) -> Tape | None:
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise InvalidArgument("operands are recorded on different tapes")
            tape = p.tape
    return tape


def _result(value, parents, backward_fn) -> Var:
    tape = _tape_of(parents)
    if tape is None:
        return Var(value)
    return tape.record(value, tuple(parents), backward_fn)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a, b) -> Var:
    a, b = lift(a), lift(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Var:
    a, b = lift(a), lift(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = lift(a), lift(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = lift(a), lift(b)
    _broadcast_shape(a, b)
    av, bv = a.value, b.value
    return _result(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a, c: float) -> Var:
    a = lift(a)
    return _result(a.value * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Var:
    a = lift(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Var:
    a = lift(a)
    y = np.tanh(a.value)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def log(a) -> Var:
    a = lift(a)
    av = a.value
    return _result(np.log(av), (a,), lambda g: (g / av,))


def softmax(logits, mask=None) -> Var:
    """Row-wise softmax by max subtraction.

    ``mask`` is a 0/1 array broadcastable to the logits; masked entries get
    exactly zero probability and every row must keep at least one entry.
    """
    x = lift(logits)
    if x.value.size == 0:
        raise ShapeError("softmax of an empty vector")
    xv = x.value
    if mask is None:
        z = xv - xv.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), xv.shape)
        if not m.any(axis=1).all():
            raise InvalidArgument("softmax mask removes every entry of a row")
        top = np.where(m, xv, -np.inf).max(axis=1, keepdims=True)
        e = np.where(m, np.exp(np.where(m, xv - top, 0.0)), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), bw)


def pick(a, index) -> Var:
    """Column ``index[i]`` of row ``i``, as a column vector."""
    a = lift(a)
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.shape[0] != a.rows:
        raise ShapeError(f"pick: {idx.shape[0]} indices for {a.rows} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= a.cols):
        raise InvalidArgument(f"pick: index out of range for {a.cols} columns")
    rows = np.arange(a.rows)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[rows, idx] = g[:, 0]
        return (out,)

    return _result(a.value[rows, idx][:, None], (a,), bw)


def take_rows(table, index) -> Var:
    """Gather rows of ``table``; used for embedding lookup."""
    table = lift(table)
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.rows):
        raise InvalidArgument(f"take_rows: index out of range for {table.rows} rows")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(table.value[idx], (table,), bw)


def concat_cols(*parts) -> Var:
    parts = tuple(lift(p) for p in parts)
    if len({p.rows for p in parts}) != 1:
        raise ShapeError("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.value for p in parts], axis=1), parts, bw)


def slice_cols(a, start: int, stop: int) -> Var:
    a = lift(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _result(a.value[:, start:stop], (a,), bw)


def slice_rows(a, start: int, stop: int) -> Var:
    a = lift(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _result(a.value[start:stop], (a,), bw)


def row_sum(a) -> Var:
    a = lift(a)
    cols = a.cols
    return _result(a.value.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, cols, axis=1),))


def total(a) -> Var:
    a = lift(a)
    shape = a.shape
    return _result(a.value.sum().reshape(1, 1), (a,), lambda g: (np.full(shape, g[0, 0]),))


def weighted_total(a, weights) -> Var:
    """Sum of ``a * weights`` with constant weights."""
    a = lift(a)
    w = np.broadcast_to(as_matrix(weights), a.shape)
    return _result((a.value * w).sum().reshape(1, 1), (a,), lambda g: (g[0, 0] * w,))


def select_steps(states: Sequence[Var], steps) -> Var:
    """Row ``i`` of ``states[steps[i]]``: per-row pick across a time series."""
    states = tuple(lift(s) for s in states)
    idx = np.asarray(steps, dtype=np.int64).reshape(-1)
    rows = states[0].rows
    if idx.shape[0] != rows:
        raise ShapeError("select_steps: one step index per row required")
    out = np.empty_like(states[0].value)
    for t, s in enumerate(states):
        hit = idx == t
        out[hit] = s.value[hit]

    def bw(g):
        grads = []
        for t in range(len(states)):
            hit = idx == t
            if hit.any():
                gt = np.zeros_like(g)
                gt[hit] = g[hit]
                grads.append(gt)
            else:
                grads.append(None)
        return tuple(grads)

    return _result(out, states, bw)


def cross_entropy(pred, target_index) -> Var:
    """Negative log probability of the target class (one row per example)."""
    p = lift(pred)
    idx = np.asarray(target_index, dtype=np.int64).reshape(-1)
    if idx.size == 1 and p.rows > 1:
        idx = np.repeat(idx, p.rows)
    if idx.size and (idx.min() < 0 or idx.max() >= p.cols):
        raise InvalidArgument(f"target index out of range for {p.cols} classes")
    return scale(log(pick(p, idx)), -1.0)


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmCellParams:
    """Gate weights stacked as [input | forget | candidate | output] blocks.

    ``wx`` is (input, 4*hidden), ``wh`` is (hidden, 4*hidden) and ``b`` is
    (1, 4*hidden). Entries may be arrays or tape variables.
    """

    wx: object
    wh: object
    b: object

    def __post_init__(self):
        wx, wh, b = (as_matrix(v.value if isinstance(v, Var) else v) for v in (self.wx, self.wh, self.b))
        hidden = wh.shape[0]
        if wh.shape != (hidden, 4 * hidden) or wx.shape[1] != 4 * hidden or b.shape != (1, 4 * hidden):
            raise ShapeError(f"inconsistent LSTM shapes: wx {wx.shape}, wh {wh.shape}, b {b.shape}")

    @property
    def hidden_size(self) -> int:
        wh = self.wh.value if isinstance(self.wh, Var) else np.asarray(self.wh)
        return wh.shape[0]

    @property
    def input_size(self) -> int:
        wx = self.wx.value if isinstance(self.wx, Var) else np.asarray(self.wx)
        return as_matrix(wx).shape[0]

    @classmethod
    def from_arrays(cls, arrays: Mapping, prefix: str) -> "LstmCellParams":
        return cls(arrays[prefix + ".wx"], arrays[prefix + ".wh"], arrays[prefix + ".b"])


def init_lstm(rng: np.random.Generator, input_size: int, hidden: int, prefix: str, init_scale=0.08) -> dict:
    return {
        prefix + ".wx": uniform_init(rng, (input_size, 4 * hidden), init_scale),
        prefix + ".wh": uniform_init(rng, (hidden, 4 * hidden), init_scale),
        prefix + ".b": uniform_init(rng, (1, 4 * hidden), init_scale),
    }


def _lstm_gates(pre, c) -> Var:
    # fused gate nonlinearity; output is [h' | c'] so that one node covers the cell
    hidden = c.cols
    pv, cv = pre.value, c.value
    i = 0.5 * (1.0 + np.tanh(0.5 * pv[:, :hidden]))
    f = 0.5 * (1.0 + np.tanh(0.5 * pv[:, hidden:2 * hidden]))
    cand = np.tanh(pv[:, 2 * hidden:3 * hidden])
    o = 0.5 * (1.0 + np.tanh(0.5 * pv[:, 3 * hidden:]))
    c_new = f * cv + i * cand
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(g):
        gh, gc = g[:, :hidden], g[:, hidden:]
        gc = gc + gh * o * (1.0 - tc * tc)
        gpre = np.concatenate(
            [
                gc * cand * i * (1.0 - i),
                gc * cv * f * (1.0 - f),
                gc * i * (1.0 - cand * cand),
                gh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        return gpre, gc * f

    return _result(np.concatenate([h_new, c_new], axis=1), (pre, c), bw)


def lstm_step(cell: LstmCellParams, x, state):
    """One LSTM step; returns the new ``(h, c)`` pair."""
    x = lift(x)
    h, c = (lift(s) for s in state)
    hidden = cell.hidden_size
    if x.cols != cell.input_size:
        raise ShapeError(f"lstm_step: input width {x.cols}, cell expects {cell.input_size}")
    if h.cols != hidden or c.cols != hidden:
        raise ShapeError(f"lstm_step: state width must be {hidden}")
    pre = add(add(matmul(x, cell.wx), matmul(h, cell.wh)), cell.b)
    hc = _lstm_gates(pre, c)
    return slice_cols(hc, 0, hidden), slice_cols(hc, hidden, 2 * hidden)


def zero_state(rows: int, hidden: int):
    return Var(np.zeros((rows, hidden))), Var(np.zeros((rows, hidden)))


# ---------------------------------------------------------------------------
# optimisation and verification


def uniform_init(rng: np.random.Generator, shape, init_scale=0.08) -> np.ndarray:
    return rng.uniform(-init_scale, init_scale, size=shape).astype(DTYPE)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], learning_rate: float,
             clip_norm: float | None = None) -> dict[str, np.ndarray]:
    """Return ``p - lr * g`` for every parameter.

    Parameters without a gradient entry are carried over unchanged.
    ``clip_norm`` rescales the whole gradient when its global L2 norm exceeds
    the threshold.
    """
    factor = 1.0
    if clip_norm is not None:
        norm = global_norm(grads)
        if norm > clip_norm:
            factor = clip_norm / norm
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if np.shape(g) != np.shape(p):
            raise ShapeError(f"sgd_step: gradient for {name!r} has shape {np.shape(g)}, param {np.shape(p)}")
        out[name] = p - (learning_rate * factor) * g
    return out


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    coordinates: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic, numeric, floor=1e-6):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(loss_fn: Callable[[Mapping[str, Var]], Var], params: Mapping[str, np.ndarray],
               epsilon: float = 1e-4, tolerance: float = 1e-4, floor: float = 1e-6,
               names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` maps a dict of variables to a scalar ``Var``; it is called once
    on a tape and then repeatedly on perturbed tape-less copies. Relative
    error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps coordinates
    whose true gradient is numerically zero from dominating the report.
    """
    params = {k: as_matrix(v).copy() for k, v in params.items()}
    tape = Tape()
    bound = tape.bind(params)
    analytic = backward(tape, loss_fn(bound), bound)

    def value_at(arrays):
        return float(loss_fn({k: Var(v) for k, v in arrays.items()}).value[0, 0])

    worst, worst_name, worst_idx, count = 0.0, None, None, 0
    for name in names if names is not None else params:
        arr = params[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            up = value_at(params)
            arr[idx] = orig - epsilon
            down = value_at(params)
            arr[idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = float(relative_error(analytic[name][idx], numeric, floor))
            count += 1
            if err > worst:
                worst, worst_name, worst_idx = err, name, idx
    return GradCheckReport(worst, worst_name, worst_idx, count, tolerance)
