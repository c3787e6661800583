"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` whenever one of
their inputs requires a gradient.  A tape is opened with ``with Tape() as
tape:`` and consumed exactly once by :func:`backward`.  Outside a tape the
same functions run as plain numpy arithmetic, which is what inference and the
finite-difference checker rely on.

Arrays may carry leading batch axes; every op works on the trailing axis the
way the single-vector formulas are written.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class MaskError(ValueError):
    """A softmax mask hides every position."""


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition."""


class DeterminismError(RuntimeError):
    """A function evaluated twice at the same point gave different values."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")
    # let numpy defer mixed ndarray/Tensor arithmetic to the reflected methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        # float64 everywhere; long double survives only for the extended-precision oracle
        if type(data) is not np.ndarray or data.dtype != np.float64:
            data = np.asarray(data)
            if data.dtype != np.longdouble:
                data = data.astype(np.float64)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; everything routes through the recorded functions below.
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
        return sub(0.0, self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_state = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._outer: Tape | None = None

    def __enter__(self) -> "Tape":
        self._outer = _active_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._outer

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        if self.consumed:
            raise ContractViolation("tape already consumed by backward()")
        self.nodes.append(_Node(out, inputs, backward))


class no_tape:
    """Context manager that suspends recording (e.g. for evaluation inside training)."""

    def __enter__(self):
        self._outer = _active_tape()
        _state.tape = None
        return self

    def __exit__(self, *exc):
        _state.tape = self._outer


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(value: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Wrap ``value`` and, under an active tape, record how to pull gradients back.

    ``backward(g)`` must return one gradient (or None) per input, in order.
    """
    out = Tensor(value)
    tape = getattr(_state, "tape", None)
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out.requires_grad = True
                tape.record(out, inputs, backward)
                break
    return out


record_op = _emit


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(kind: str, fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# pointwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    y = _binary("add", np.add, a, b)
    sa, sb = a.data.shape, b.data.shape
    return _emit(y, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    y = _binary("sub", np.subtract, a, b)
    sa, sb = a.data.shape, b.data.shape
    return _emit(y, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    y = _binary("mul", np.multiply, a, b)
    ad, bd = a.data, b.data
    return _emit(
        y, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large |x|
    y = 0.5 + 0.5 * np.tanh(0.5 * x.data)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    return _emit(np.log(d), (x,), lambda g: (g / d,))


_POINTWISE = {"tanh": tanh, "sigmoid": sigmoid, "add": add, "sub": sub, "mul": mul}


def pointwise(kind: str, *operands) -> Tensor:
    """Dispatch by name to one of ``tanh``, ``sigmoid``, ``add``, ``sub``, ``mul``."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise op {kind!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes of 3-d+ operands are treated as a batch."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.data.ndim != b.data.ndim or a.shape[:-2] != b.shape[:-2]:
        if not (a.data.ndim == 2 and b.data.ndim == 2):
            raise DimensionError(f"matmul: batch axes differ in {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _emit(ad @ bd, (a, b), backward)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``W x + b`` applied along the last axis of ``x`` (any leading shape)."""
    xd, Wd = x.data, W.data
    if Wd.ndim != 2 or xd.shape[-1] != Wd.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not fit matrix {W.shape}")
    if b is not None and b.data.shape != (Wd.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not fit matrix {W.shape}")
    y = xd @ Wd.T
    if b is not None:
        y = y + b.data
    n_in = Wd.shape[1]

    def backward(g):
        gx = g @ Wd
        g2 = g.reshape(-1, g.shape[-1])
        gW = g2.T @ xd.reshape(-1, n_in)
        gb = g2.sum(axis=0)
        return (gx, gW, gb) if b is not None else (gx, gW)

    inputs = (x, W, b) if b is not None else (x, W)
    return _emit(y, inputs, backward)


# ---------------------------------------------------------------------------
# structural


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        y = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as err:
        raise DimensionError(f"concat: {[p.shape for p in parts]}: {err}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _emit(y, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """``x[index]`` along ``axis``; an integer index drops the axis."""
    shape = x.shape
    sl = (slice(None),) * (axis % x.data.ndim) + (index,)
    y = x.data[sl]

    def backward(g):
        gx = np.zeros(shape)
        np.add.at(gx, sl, g)
        return (gx,)

    return _emit(y, (x,), backward)


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _emit(table.data[ids], (table,), backward)


def pick(x: Tensor, ids) -> Tensor:
    """Select ``x[..., ids]`` per row: one entry of the last axis for each leading index."""
    ids = np.asarray(ids, dtype=np.int64)
    lead = x.shape[:-1]
    if ids.shape != lead:
        raise DimensionError(f"pick: ids {ids.shape} do not match leading shape {lead}")
    flat = x.data.reshape(-1, x.shape[-1])
    rows = np.arange(flat.shape[0])
    y = flat[rows, ids.reshape(-1)].reshape(lead)
    shape = x.shape

    def backward(g):
        gx = np.zeros((rows.size, shape[-1]))
        gx[rows, ids.reshape(-1)] = g.reshape(-1)
        return (gx.reshape(shape),)

    return _emit(y, (x,), backward)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    y = x.data.sum() if axis is None else x.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(np.asarray(y), (x,), backward)


# ---------------------------------------------------------------------------
# normalisation


def softmax(x: Tensor, mask=None) -> Tensor:
    """Max-stabilised softmax over the last axis.

    ``mask`` is a boolean array (True = visible) broadcastable to ``x``; hidden
    positions come out exactly zero.
    """
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not mask.any(axis=-1).all():
            raise MaskError("softmax: every position is masked")
        d = np.where(mask, d, -np.inf)
    z = d - d.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    d = x.data
    z = d - d.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _emit(y, (x,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(.) through ``tape`` in reverse recording order.

    Gradients accumulate into ``.grad`` of every reachable tensor, so leaves
    that already hold a gradient receive the sum.
    """
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise ContractViolation("tape already consumed by backward()")
    tape.consumed = True
    pending: dict[int, tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.ones(loss.shape))}
    for node in reversed(tape.nodes):
        entry = pending.pop(id(node.out), None)
        if entry is None:
            continue
        g = entry[1]
        node.out.grad = g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if not inp.requires_grad or gi is None:
                continue
            key = id(inp)
            if key in pending:
                pending[key] = (inp, pending[key][1] + gi)
            else:
                pending[key] = (inp, gi)
    # what remains belongs to leaves (parameters)
    for t, g in pending.values():
        t.grad = g.copy() if t.grad is None else t.grad + g


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor] | dict,
    h: float = 1e-5,
    stencil: int = 2,
    extended: bool = False,
) -> float:
    """Max relative error between backward-pass and finite-difference gradients.

    ``f`` takes no arguments and reads the current parameter values; it is
    called once under a tape for the analytic gradient and ``stencil`` times
    per entry without one.  ``stencil=2`` is the central difference
    ``(f(x+h) - f(x-h)) / 2h``; ``stencil=4`` is the fourth-order
    ``(f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h``.  With ``extended`` the
    numeric side runs in long double, which removes float64 roundoff from
    entries whose true gradient is close to zero.
    Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    return max(finite_difference_report(f, params, h, stencil, extended).values(), default=0.0)


def finite_difference_report(
    f: Callable[[], Tensor],
    params: Iterable[Tensor] | dict,
    h: float = 1e-5,
    stencil: int = 2,
    extended: bool = False,
) -> dict[str, float]:
    """Per-tensor maximum relative error; keys are names (or positions)."""
    if h <= 0:
        raise ValueError("step size must be positive")
    if stencil == 2:
        offsets, weights, denom = (1, -1), (1, -1), 2
    elif stencil == 4:
        offsets, weights, denom = (-2, -1, 1, 2), (1, -8, 8, -1), 12
    else:
        raise ValueError("stencil must be 2 or 4")
    named = params.items() if isinstance(params, dict) else ((str(i), p) for i, p in enumerate(params))
    named = list(named)

    with no_tape():
        f0 = f().data
        if not np.array_equal(f().data, f0):
            raise DeterminismError("objective changed between two evaluations at the same point")

    for _, p in named:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    analytic = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for name, p in named}

    dtype = np.longdouble if extended else np.float64
    saved = {name: p.data for name, p in named}
    for _, p in named:
        p.data = p.data.astype(dtype)
    hh = dtype(h)
    report = {}
    try:
        with no_tape():
            for name, p in named:
                flat = p.data.reshape(-1)
                grad = analytic[name].reshape(-1)
                worst = 0.0
                for j in range(flat.size):
                    keep = flat[j]
                    acc = dtype(0)
                    for off, w in zip(offsets, weights):
                        flat[j] = keep + off * hh
                        acc += w * f().data.reshape(-1)[0]
                    flat[j] = keep
                    numeric = float(acc / (denom * hh))
                    a = float(grad[j])
                    worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
                report[name] = worst
    finally:
        for name, p in named:
            p.data = saved[name]
    return report
