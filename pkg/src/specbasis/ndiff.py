"""Small reverse-mode autodiff kernel over dense float64 arrays.

Every operation returns a new :class:`Tensor`.  When any input requires a
gradient (and recording is enabled) the output carries a :class:`TapeRecord`
holding the inputs, saved forward intermediates and a vector-Jacobian
product.  Node ids are drawn from a per-thread increasing counter, so sorting
records by output id is a valid topological order; :func:`backward` walks
that order in reverse exactly once.

The op set is deliberately narrow: what an MLP -> QR -> Gram solve ->
squared-error pipeline needs, and nothing else.  Broadcasting is limited to
scalar operands plus the two explicit row/column helpers
:func:`add_row` and :func:`scale_rows`.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import (
    ContractError,
    DegenerateBasisError,
    DimensionError,
    NonFiniteError,
    SingularGramError,
)

__all__ = [
    "Tensor",
    "TapeRecord",
    "ComputationTape",
    "tensor",
    "no_grad",
    "is_recording",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "gelu",
    "tanh",
    "reduce",
    "transpose",
    "columns",
    "reshape",
    "add_row",
    "scale_rows",
    "clamp_min",
    "qr_reduced",
    "spd_solve",
    "backward",
    "collect_tape",
    "zero_grad",
    "JITTER_LADDER",
    "QR_RANK_RTOL",
]

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
QR_RANK_RTOL = 1e-10
_SYM_TOL = 1e-10
_GELU_C = math.sqrt(2.0 / math.pi)

_state = threading.local()


def _next_id() -> int:
    counter = getattr(_state, "counter", None)
    if counter is None:
        counter = _state.counter = itertools.count()
    return next(counter)


def is_recording() -> bool:
    return getattr(_state, "recording", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (this thread only)."""
    prev = is_recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {what}")


@dataclass(eq=False)
class TapeRecord:
    op: str
    inputs: tuple
    outputs: tuple
    saved: dict
    vjp: Callable

    @property
    def output_id(self) -> int:
        return max(o.id for o in self.outputs)

    @property
    def input_ids(self) -> tuple:
        return tuple(t.id for t in self.inputs)


class Tensor:
    """Shape-tagged float64 array with an optional gradient accumulator."""

    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, _record: TapeRecord | None = None):
        arr = np.array(value, dtype=np.float64, copy=True, order="C")
        _check_finite(arr, "tensor construction")
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.id = _next_id()
        self.record = _record

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError("item() needs a single-element tensor")
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class ComputationTape:
    """Ordered records reachable from one output, inputs before outputs."""

    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def tensor(value, requires_grad: bool = False) -> Tensor:
    return Tensor(value, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, values, inputs: Sequence[Tensor], vjp: Callable, saved: dict | None = None):
    """Wrap forward results; attach a tape record when any input needs grad."""
    single = isinstance(values, np.ndarray)
    vals = (values,) if single else tuple(values)
    for v in vals:
        _check_finite(v, op)
    needs = is_recording() and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor._from_array(v, needs) for v in vals)
    if needs:
        rec = TapeRecord(op, tuple(inputs), outs, saved or {}, vjp)
        for o in outs:
            o.record = rec
    return outs[0] if single else outs


def _from_array(arr: np.ndarray, requires_grad: bool) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.value = np.ascontiguousarray(arr, dtype=np.float64)
    t.requires_grad = requires_grad
    t.grad = None
    t.id = _next_id()
    t.record = None
    return t


Tensor._from_array = staticmethod(_from_array)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not agree")
    av, bv = a.value, b.value

    def vjp(gs):
        (g,) = gs
        return g @ bv.T, av.T @ g

    return _make("matmul", av @ bv, (a, b), vjp)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("transpose expects a matrix")
    return _make("transpose", a.value.T.copy(), (a,), lambda gs: (gs[0].T,))


def columns(a, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of a matrix."""
    a = _as_tensor(a)
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"bad column range {start}:{stop} for shape {a.shape}")
    shape = a.shape

    def vjp(gs):
        out = np.zeros(shape)
        out[:, start:stop] = gs[0]
        return (out,)

    return _make("columns", a.value[:, start:stop].copy(), (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _make("reshape", a.value.reshape(shape).copy(), (a,), lambda gs: (gs[0].reshape(old),))


def add_row(a, row) -> Tensor:
    """``a + row`` with ``row`` (length p) added to every row of ``a`` (n x p)."""
    a, row = _as_tensor(a), _as_tensor(row)
    if a.ndim != 2 or row.shape != (a.shape[1],):
        raise DimensionError(f"add_row shapes {a.shape} and {row.shape} do not agree")
    return _make("add_row", a.value + row.value, (a, row), lambda gs: (gs[0], gs[0].sum(axis=0)))


def scale_rows(a, w) -> Tensor:
    """``diag(w) @ a``."""
    a, w = _as_tensor(a), _as_tensor(w)
    if a.ndim != 2 or w.shape != (a.shape[0],):
        raise DimensionError(f"scale_rows shapes {a.shape} and {w.shape} do not agree")
    av, wv = a.value, w.value

    def vjp(gs):
        (g,) = gs
        return g * wv[:, None], np.einsum("ij,ij->i", g, av)

    return _make("scale_rows", av * wv[:, None], (a, w), vjp)


# ------------------------------------------------------------------ elementwise


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def elementwise(op: str, a, b=None) -> Tensor:
    """Pointwise ``add``, ``sub``, ``mul``, ``scale``, ``relu``, ``gelu`` or ``tanh``.

    Binary ops accept a same-shape tensor or a Python scalar for ``b``.
    """
    a = _as_tensor(a)
    av = a.value
    if op in ("relu", "gelu", "tanh"):
        if b is not None:
            raise ContractError(f"{op} is unary")
        if op == "relu":
            mask = av > 0
            return _make("relu", np.where(mask, av, 0.0), (a,), lambda gs: (gs[0] * mask,))
        if op == "gelu":
            return _make("gelu", _gelu(av), (a,), lambda gs: (gs[0] * _gelu_grad(av),))
        out = np.tanh(av)
        return _make("tanh", out, (a,), lambda gs: (gs[0] * (1.0 - out * out),))

    if op == "scale":
        if isinstance(b, Tensor) or b is None:
            raise ContractError("scale takes a Python scalar")
        s = float(b)
        return _make("scale", av * s, (a,), lambda gs: (gs[0] * s,))

    if op not in ("add", "sub", "mul"):
        raise ContractError(f"unknown elementwise op {op!r}")
    if isinstance(b, np.ndarray) and b.ndim > 0:
        b = Tensor(b)
    if not isinstance(b, Tensor):
        s = float(b)
        if op == "add":
            return _make("add", av + s, (a,), lambda gs: (gs[0],))
        if op == "sub":
            return _make("sub", av - s, (a,), lambda gs: (gs[0],))
        return _make("mul", av * s, (a,), lambda gs: (gs[0] * s,))

    if b.shape != a.shape:
        raise DimensionError(f"{op} shapes {a.shape} and {b.shape} differ")
    bv = b.value
    if op == "add":
        return _make("add", av + bv, (a, b), lambda gs: (gs[0], gs[0]))
    if op == "sub":
        return _make("sub", av - bv, (a, b), lambda gs: (gs[0], -gs[0]))
    return _make("mul", av * bv, (a, b), lambda gs: (gs[0] * bv, gs[0] * av))


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def scale(a, s: float) -> Tensor:
    return elementwise("scale", a, s)


def relu(a) -> Tensor:
    return elementwise("relu", a)


def gelu(a) -> Tensor:
    return elementwise("gelu", a)


def tanh(a) -> Tensor:
    return elementwise("tanh", a)


def clamp_min(a, floor: float) -> Tensor:
    """``max(a, floor)``; the gradient is zero on clamped entries."""
    a = _as_tensor(a)
    keep = a.value >= floor
    return _make("clamp_min", np.where(keep, a.value, floor), (a,), lambda gs: (gs[0] * keep,))


# -------------------------------------------------------------------- reductions


def reduce(op: str, a, axis: int | None = None) -> Tensor:
    """``sum``, ``mean`` or ``sq_norm`` over all entries or along ``axis``."""
    a = _as_tensor(a)
    av = a.value
    if axis is not None and not -av.ndim <= axis < av.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {av.shape}")
    count = av.size if axis is None else av.shape[axis]

    def expand(g):
        g = np.asarray(g)
        if axis is None:
            return np.broadcast_to(g, av.shape)
        return np.broadcast_to(np.expand_dims(g, axis), av.shape)

    if op == "sum":
        return _make("sum", np.asarray(av.sum(axis=axis)), (a,), lambda gs: (expand(gs[0]).copy(),))
    if op == "mean":
        return _make("mean", np.asarray(av.mean(axis=axis)), (a,), lambda gs: (expand(gs[0]) / count,))
    if op == "sq_norm":
        out = np.asarray((av * av).sum(axis=axis))
        return _make("sq_norm", out, (a,), lambda gs: (2.0 * av * expand(gs[0]),))
    raise ContractError(f"unknown reduction {op!r}")


# ------------------------------------------------------------------ factorizations


def qr_reduced(a) -> tuple[Tensor, Tensor]:
    """Reduced QR with ``diag(r) > 0``.

    Raises :class:`DegenerateBasisError` when the smallest singular value is
    below ``QR_RANK_RTOL`` times the largest; ``column`` points at the first
    column whose diagonal entry of ``r`` falls under that threshold.
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("qr_reduced expects a matrix")
    n, k = a.shape
    if n < k:
        raise DimensionError(f"qr_reduced needs n >= K, got {a.shape}")
    q, r = np.linalg.qr(a.value, mode="reduced")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q = q * signs
    r = r * signs[:, None]
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[0] == 0 or sv[-1] <= QR_RANK_RTOL * sv[0]:
        d = np.abs(np.diag(r))
        bad = np.flatnonzero(d <= QR_RANK_RTOL * max(d.max(), 1e-300))
        col = int(bad[0]) if bad.size else int(np.argmin(d))
        raise DegenerateBasisError(f"rank-deficient input to QR at column {col}", column=col)

    def vjp(gs):
        gq, gr = gs
        m = r @ gr.T - gq.T @ q
        copyltu = np.tril(m) + np.tril(m, -1).T
        rhs = gq + q @ copyltu
        return (sla.solve_triangular(r, rhs.T, lower=False).T,)

    return _make("qr_reduced", (q, r), (a,), vjp, {"q": q, "r": r})


def _cholesky_with_jitter(g: np.ndarray):
    try:
        return sla.cho_factor(g, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(g.shape[0])
    for eps in JITTER_LADDER:
        try:
            return sla.cho_factor(g + eps * eye, lower=True, check_finite=False), eps
        except np.linalg.LinAlgError:
            continue
    raise SingularGramError(f"Gram matrix not positive definite after jitter {JITTER_LADDER[-1]:g}")


def spd_solve(g, b) -> Tensor:
    """Solve ``g x = b`` for symmetric positive-definite ``g`` via Cholesky.

    Cholesky failure retries with ``g + eps I`` for eps in ``JITTER_LADDER``.
    The gradient handed to ``g`` is symmetrized.
    """
    g, b = _as_tensor(g), _as_tensor(b)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError(f"spd_solve needs a square matrix, got {g.shape}")
    if b.ndim != 2 or b.shape[0] != g.shape[0]:
        raise DimensionError(f"spd_solve rhs shape {b.shape} does not match {g.shape}")
    gv = g.value
    asym = np.abs(gv - gv.T).max() if gv.size else 0.0
    if asym > _SYM_TOL * max(1.0, np.abs(gv).max()):
        raise ContractError(f"spd_solve matrix not symmetric (max asymmetry {asym:.3g})")
    factor, jitter = _cholesky_with_jitter(gv)
    x = sla.cho_solve(factor, b.value, check_finite=False)

    def vjp(gs):
        (gx,) = gs
        s = sla.cho_solve(factor, gx, check_finite=False)
        return -0.5 * (s @ x.T + x @ s.T), s

    return _make("spd_solve", x, (g, b), vjp, {"jitter": jitter})


# ------------------------------------------------------------------------ backward


def collect_tape(out: Tensor) -> ComputationTape:
    """All records reachable from ``out``, sorted so inputs precede outputs."""
    seen = {}
    stack = [out]
    while stack:
        t = stack.pop()
        rec = t.record
        if rec is None or id(rec) in seen:
            continue
        seen[id(rec)] = rec
        stack.extend(rec.inputs)
    return ComputationTape(sorted(seen.values(), key=lambda r: r.output_id))


def backward(loss: Tensor) -> dict:
    """Accumulate ``d loss / d node`` into ``.grad`` of every node needing it.

    Gradients add onto existing ``.grad`` buffers, so repeated calls without
    :func:`zero_grad` accumulate.  Returns ``{leaf: grad}`` for the leaves
    (parameters) reached.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    if loss.record is None:
        loss.grad = np.ones_like(loss.value) if loss.grad is None else loss.grad + 1.0
        return {loss: loss.grad}
    tape = collect_tape(loss)
    pending = {loss.id: np.ones_like(loss.value)}
    leaves = {}

    def push(t: Tensor, g: np.ndarray):
        if not t.requires_grad:
            return
        g = np.asarray(g, dtype=np.float64).reshape(t.shape)
        if t.id in pending:
            pending[t.id] = pending[t.id] + g
        else:
            pending[t.id] = g
        if t.record is None:
            leaves[t.id] = t

    for rec in reversed(tape.records):
        gs = []
        for o in rec.outputs:
            g = pending.pop(o.id, None)
            if g is None:
                g = np.zeros_like(o.value)
            else:
                _check_finite(g, f"backward of {rec.op}")
                o.grad = g if o.grad is None else o.grad + g
            gs.append(g)
        for t, g in zip(rec.inputs, rec.vjp(gs)):
            push(t, g)

    result = {}
    for tid, t in leaves.items():
        g = pending.pop(tid)
        _check_finite(g, "backward")
        t.grad = g.copy() if t.grad is None else t.grad + g
        result[t] = t.grad
    return result


def zero_grad(params) -> None:
    for p in params:
        p.grad = None
