"""Reverse-mode automatic differentiation on a define-by-run tape.

A Tensor wraps a float64 numpy array.  While a Tape is active (used as a
context manager), every operation involving a tracked tensor appends one
entry to the tape; backward() then walks the entries once in reverse
creation order, which is a valid reverse topological order, so each node's
gradient is accumulated exactly once.

Only float64 is supported.  Gradients are checked against central finite
differences at tolerances (1e-6 for smooth ops) that float32 cannot meet.

A parameter tensor belongs to at most one live tape: recording it on a new
tape invalidates its node id on any previous one.  Build a fresh Tape per
training step.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_EPS_COSINE = 1e-8


class Tensor:
    """A float64 array plus the bookkeeping needed to reach it in backward."""

    __slots__ = ("data", "requires_grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


_ACTIVE: "Tape | None" = None


class Tape:
    """Recording of one forward pass; usable once as a context manager."""

    def __init__(self):
        # entry: (out_id, [(in_id, pull), ...]) where pull(g) returns the
        # gradient contribution of the output cotangent g to that input
        self._entries: list[tuple[int, list[tuple[int, Callable]]]] = []
        self._next_id = 0
        self._leaves: dict[int, Tensor] = {}

    def _alloc(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("nested tapes are not supported")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(out_data: np.ndarray, inputs: tuple, pulls: tuple) -> Tensor:
    """Wrap an op result, recording it if any differentiable input is tracked."""
    out = Tensor(out_data)
    tape = _ACTIVE
    if tape is None:
        return out
    tracked: list[tuple[int, Callable]] = []
    for t, pull in zip(inputs, pulls):
        if pull is None:
            continue
        if t.requires_grad and t.tape is not tape:
            t.node_id = tape._alloc()
            t.tape = tape
            tape._leaves[t.node_id] = t
        if t.tape is tape:
            tracked.append((t.node_id, pull))
    if tracked:
        out.node_id = tape._alloc()
        out.tape = tape
        tape._entries.append((out.node_id, tracked))
    return out


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar recorded loss w.r.t. every requires_grad leaf.

    Leaves that the loss does not reach (e.g. behind stop_gradient) map to
    zeros.  The returned dict is keyed by the leaf Tensor objects.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None or loss.node_id is None:
        raise ContractError("backward: loss is not recorded on any tape")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for out_id, tracked in reversed(tape._entries):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for in_id, pull in tracked:
            contrib = pull(g)
            prev = grads.get(in_id)
            grads[in_id] = contrib if prev is None else prev + contrib
    return {
        leaf: np.array(grads[nid]) if nid in grads else np.zeros_like(leaf.data)
        for nid, leaf in tape._leaves.items()
    }


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_op(name: str, a, b, fwd, pull_a, pull_b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(name, a.data.shape, b.data.shape) from None
    return _apply(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(pull_a(g, a.data, b.data), a.data.shape),
            lambda g: _unbroadcast(pull_b(g, a.data, b.data), b.data.shape),
        ),
    )


def add(a, b) -> Tensor:
    return _broadcast_op("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _broadcast_op("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    """Elementwise product; with a 0-d operand this is scalar multiplication."""
    return _broadcast_op("mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    return _apply(
        a.data @ b.data,
        (a, b),
        (lambda g: g @ b.data.T, lambda g: a.data.T @ g),
    )


def concat_last(a, b) -> Tensor:
    """Concatenate along the last axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != b.data.ndim or a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError("concat_last", a.data.shape, b.data.shape)
    na = a.data.shape[-1]
    return _apply(
        np.concatenate([a.data, b.data], axis=-1),
        (a, b),
        (lambda g: g[..., :na], lambda g: g[..., na:]),
    )


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return _apply(out, (x,), (lambda g: g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    return _apply(np.maximum(x.data, 0.0), (x,), (lambda g: g * (x.data > 0),))


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    return _apply(np.abs(x.data), (x,), (lambda g: g * np.sign(x.data),))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    return _apply(np.sum(x.data), (x,), (lambda g: np.ones_like(x.data) * g,))


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    if n == 0:
        raise ContractError("mean_all: empty tensor")
    return _apply(np.mean(x.data), (x,), (lambda g: np.ones_like(x.data) * (g / n),))


def _check_segments(name: str, n: int, offsets: np.ndarray) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets.ndim != 1 or offsets.size == 0:
        raise ContractError(f"{name}: offsets must be a non-empty 1-d array")
    if offsets[0] <= 0 or np.any(np.diff(offsets) <= 0):
        raise ContractError(f"{name}: empty segment (offsets must be strictly increasing)")
    if offsets[-1] != n:
        raise ContractError(f"{name}: offsets end at {offsets[-1]} but input has {n} rows")
    return offsets


def segment_sum(x, offsets) -> Tensor:
    """Per-segment row sums; offsets are exclusive segment ends, last == n rows."""
    x = _as_tensor(x)
    offsets = _check_segments("segment_sum", x.data.shape[0], offsets)
    starts = np.concatenate([[0], offsets[:-1]])
    counts = np.diff(np.concatenate([[0], offsets]))
    out = np.add.reduceat(x.data, starts, axis=0)
    return _apply(out, (x,), (lambda g: np.repeat(g, counts, axis=0),))


def segment_mean(x, offsets) -> Tensor:
    x = _as_tensor(x)
    offsets = _check_segments("segment_mean", x.data.shape[0], offsets)
    starts = np.concatenate([[0], offsets[:-1]])
    counts = np.diff(np.concatenate([[0], offsets]))
    denom = counts.reshape((-1,) + (1,) * (x.data.ndim - 1)).astype(np.float64)
    out = np.add.reduceat(x.data, starts, axis=0) / denom
    return _apply(out, (x,), (lambda g: np.repeat(g / denom, counts, axis=0),))


def l2_norm(x) -> Tensor:
    x = _as_tensor(x)
    norm = np.sqrt(np.sum(x.data**2))

    def pull(g):
        # subgradient 0 at the origin
        return g * x.data / norm if norm > 0 else np.zeros_like(x.data)

    return _apply(np.asarray(norm), (x,), (pull,))


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine similarity; 1-d inputs give a 0-d output.

    The denominator is guarded by max(|a||b|, 1e-8) and the output clipped
    to [-1, 1]; clipping only activates where rounding pushes parallel
    vectors past 1, where the true gradient is 0 anyway.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim not in (1, 2):
        raise ShapeError("cosine_similarity", a.data.shape, b.data.shape)
    da = a.data if a.data.ndim == 2 else a.data[None, :]
    db = b.data if b.data.ndim == 2 else b.data[None, :]
    dots = np.sum(da * db, axis=-1)
    na = np.sqrt(np.sum(da * da, axis=-1))
    nb = np.sqrt(np.sum(db * db, axis=-1))
    denom = np.maximum(na * nb, _EPS_COSINE)
    raw = dots / denom
    out = np.clip(raw, -1.0, 1.0)
    guarded = na * nb > _EPS_COSINE  # where the max() picked |a||b|
    live = np.abs(raw) <= 1.0  # where the clip is inactive

    def _pull(g, u, v, nu):
        # d cos/du = v/denom - cos * u/|u|^2 when the guard is inactive,
        # else cos = <u,v>/eps which is linear in u
        g2 = np.asarray(g).reshape(-1)[:, None] * live[:, None]
        nu2 = np.where(guarded, nu * nu, 1.0)
        main = v / denom[:, None] - np.where(guarded, raw, 0.0)[:, None] * u / nu2[:, None]
        res = g2 * main
        return res if a.data.ndim == 2 else res[0]

    return _apply(
        out[0] if a.data.ndim == 1 else out,
        (a, b),
        (lambda g: _pull(g, da, db, na), lambda g: _pull(g, db, da, nb)),
    )


def squared_error(a, b) -> Tensor:
    """Sum of squared differences (0-d)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError("squared_error", a.data.shape, b.data.shape)
    diff = a.data - b.data
    return _apply(
        np.sum(diff * diff),
        (a, b),
        (lambda g: 2.0 * diff * g, lambda g: -2.0 * diff * g),
    )


def mse(a, b) -> Tensor:
    """Mean of squared differences (0-d)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError("mse", a.data.shape, b.data.shape)
    if a.data.size == 0:
        raise ContractError("mse: empty operands")
    diff = a.data - b.data
    n = diff.size
    return _apply(
        np.mean(diff * diff),
        (a, b),
        (lambda g: (2.0 / n) * diff * g, lambda g: (-2.0 / n) * diff * g),
    )


def bce_with_logits(logits, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy over observed entries, from logits.

    Stable form max(x,0) - x*y + log1p(exp(-|x|)).  `targets` (and the
    optional bool `mask` selecting observed entries) are constants; only
    `logits` receives gradient, sigma(x) - y per observed entry.
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ShapeError("bce_with_logits", logits.data.shape, y.shape)
    x = logits.data
    if mask is None:
        m = np.ones_like(x)
    else:
        m = np.asarray(mask).astype(np.float64)
        if m.shape != x.shape:
            raise ShapeError("bce_with_logits mask", x.shape, m.shape)
    count = m.sum()
    if count == 0:
        raise ContractError("bce_with_logits: no observed labels in batch")
    elem = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.sum(elem * m) / count

    def pull(g):
        sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return g * (sig - y) * m / count

    return _apply(np.asarray(out), (logits,), (pull,))


def stop_gradient(x) -> Tensor:
    """Identity forward; blocks gradient (never recorded on the tape)."""
    x = _as_tensor(x)
    return Tensor(x.data)


def straight_through(x, values) -> Tensor:
    """Forward takes `values` verbatim; backward passes the cotangent to x
    unchanged.  Equivalent to x + stop_gradient(values - x) without the
    rounding of the two float additions."""
    x = _as_tensor(x)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != x.data.shape:
        raise ShapeError("straight_through", x.data.shape, values.shape)
    return _apply(values.copy(), (x,), (lambda g: g,))


def _rows_sum_by_index(rows: np.ndarray, idx: np.ndarray, num_rows: int) -> np.ndarray:
    """Sum rows into num_rows buckets by index.  Grouping by a stable sort
    plus reduceat adds each bucket's rows in ascending input position —
    the same order np.add.at uses — but runs several times faster."""
    out = np.zeros((num_rows,) + rows.shape[1:])
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.flatnonzero(np.concatenate(([True], sorted_idx[1:] != sorted_idx[:-1])))
    out[sorted_idx[starts]] = np.add.reduceat(rows[order], starts, axis=0)
    return out


def gather_rows(x, idx) -> Tensor:
    """Select rows x[idx]; backward scatter-adds into the source rows."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"gather_rows: index out of range for {n} rows")
    return _apply(x.data[idx], (x,), (lambda g: _rows_sum_by_index(g, idx, n),))


def scatter_add(x, idx, num_rows: int) -> Tensor:
    """Sum rows of x into `num_rows` output rows by index; backward gathers."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (x.data.shape[0],):
        raise ShapeError("scatter_add", x.data.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ContractError(f"scatter_add: index out of range for {num_rows} rows")
    return _apply(_rows_sum_by_index(x.data, idx, num_rows), (x,), (lambda g: g[idx],))


def grad_check(f, x, step: float = 1e-5) -> float:
    """Max relative error between backward() and central finite differences.

    f maps one Tensor to a scalar Tensor.  Relative error per coordinate is
    |analytic - numeric| / max(1, |numeric|).
    """
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    with Tape():
        out = f(leaf)
        if out.data.size != 1:
            raise ContractError("grad_check: f must return a scalar")
        analytic = backward(out)[leaf].ravel()
    flat = leaf.data.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += step
        dn[i] -= step
        hi = f(Tensor(up.reshape(leaf.data.shape))).item()
        lo = f(Tensor(dn.reshape(leaf.data.shape))).item()
        numeric[i] = (hi - lo) / (2.0 * step)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise NumericError("grad_check: non-finite values encountered")
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
