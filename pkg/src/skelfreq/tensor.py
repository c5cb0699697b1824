"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every op returns a new Tensor that records its
inputs and a backward rule. Arrays are C-contiguous float64 throughout;
numpy supplies the array arithmetic, everything differentiable is defined
here. Broadcasting is deliberately limited to the scalar and bias cases
(one operand has size 1, or its shape is a trailing suffix of the other's).

Tensors are immutable once created except for gradient accumulation;
parameter updates during training replace `.data` between graph
executions. A graph is confined to the thread that built it; the
grad-enabled flag is thread-local so independent graphs can run on
independent threads.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shape or axis mismatch; message names the offending shapes."""


_tls = threading.local()


def _grad_enabled() -> bool:
    return getattr(_tls, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction in this thread for the duration."""
    prev = _grad_enabled()
    _tls.grad_enabled = False
    try:
        yield
    finally:
        _tls.grad_enabled = prev


class GraphNode:
    """One recorded op: its inputs and the rule mapping the output
    gradient to per-input gradients (None for untracked inputs)."""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: GraphNode | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = ", tracked" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; named functions below do the work
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, op: str, inputs: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = GraphNode(op, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# binary elementwise


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.size == 1 or b.size == 1:
        return
    if len(sb) <= len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) <= len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} are neither equal nor scalar/suffix-broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of scalar/suffix broadcast)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return np.ascontiguousarray(g.reshape(shape))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, "mul", (a, b), bw)


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a plain (untracked) scalar. scale(x, 1.0) is bitwise x."""
    s = float(s)
    if s == 1.0:
        data = x.data
    else:
        data = x.data * s

    def bw(g):
        return (g if s == 1.0 else g * s,)

    return _make(data, "scale", (x,), bw)


# ---------------------------------------------------------------------------
# unary


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0.0), "relu", (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        return (g * y * (1.0 - y),)

    return _make(y, "sigmoid", (x,), bw)


def log(x: Tensor) -> Tensor:
    def bw(g):
        return (g / x.data,)

    return _make(np.log(x.data), "log", (x,), bw)


_ELEMENTWISE_UNARY = {"relu": relu, "sigmoid": sigmoid}
_ELEMENTWISE_BINARY = {"add": add, "mul": mul}


def elementwise(x: Tensor, kind: str, other=None) -> Tensor:
    """Dispatch by kind: relu, sigmoid, add, mul, scale."""
    if kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[kind](x)
    if kind in _ELEMENTWISE_BINARY:
        return _ELEMENTWISE_BINARY[kind](x, other)
    if kind == "scale":
        return scale(x, other)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# softmax family (always max-stabilized)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim needs a nonempty last axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, "softmax", (x,), bw)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"log_softmax_lastdim needs a nonempty last axis, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    soft = np.exp(y)

    def bw(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _make(y, "log_softmax", (x,), bw)


# ---------------------------------------------------------------------------
# matmul / affine


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, "matmul", (a, b), bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over rows; literally the
    matmul/add composition so it stays bitwise-equal to it."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: x {x.shape} does not match w {w.shape}")
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# reductions


def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def reduce_mean(x: Tensor, axis: int) -> Tensor:
    axis = _check_axis(x, axis, "reduce_mean")
    n = x.shape[axis]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape),)

    return _make(x.data.mean(axis=axis), "mean", (x,), bw)


def reduce_sum(x: Tensor, axis: int) -> Tensor:
    axis = _check_axis(x, axis, "reduce_sum")

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape),)

    return _make(x.data.sum(axis=axis), "sum", (x,), bw)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Max along axis; ties route the gradient to the lowest index."""
    axis = _check_axis(x, axis, "reduce_max")
    idx = x.data.argmax(axis=axis)

    def bw(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (out,)

    return _make(x.data.max(axis=axis), "max", (x,), bw)


_REDUCE = {"mean": reduce_mean, "max": reduce_max, "sum": reduce_sum}


def reduce(x: Tensor, axis: int, kind: str) -> Tensor:
    if kind not in _REDUCE:
        raise ValueError(f"unknown reduce kind {kind!r}")
    return _REDUCE[kind](x, axis)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")

    def bw(g):
        return (np.ascontiguousarray(g.reshape(x.shape)),)

    return _make(x.data.reshape(shape), "reshape", (x,), bw)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of axes of {x.shape}")
    inv = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _make(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), bw)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along axis."""
    axis = _check_axis(x, axis, "narrow")
    if not (0 <= start and start + length <= x.shape[axis] and length >= 1):
        raise DimensionError(f"narrow: [{start}, {start + length}) invalid for axis {axis} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        out = np.zeros_like(x.data)
        out[sl] = g
        return (out,)

    return _make(np.ascontiguousarray(x.data[sl]), "narrow", (x,), bw)


def split(x: Tensor, axis: int, sizes: Sequence[int]) -> list[Tensor]:
    axis = _check_axis(x, axis, "split")
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split: sizes {tuple(sizes)} do not cover axis {axis} of {x.shape}")
    parts, off = [], 0
    for n in sizes:
        parts.append(narrow(x, axis, off, n))
        off += n
    return parts


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise DimensionError("concat: need at least one part")
    axis = _check_axis(parts[0], axis, "concat")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis):
            raise DimensionError(f"concat: shape {p.shape} incompatible with {parts[0].shape} on axis {axis}")
    sizes = [p.shape[axis] for p in parts]

    def bw(g):
        grads, off = [], 0
        sl = [slice(None)] * g.ndim
        for n in sizes:
            sl[axis] = slice(off, off + n)
            grads.append(np.ascontiguousarray(g[tuple(sl)]))
            off += n
        return tuple(grads)

    return _make(np.concatenate([p.data for p in parts], axis=axis), "concat", tuple(parts), bw)


def permute_axis(x: Tensor, perm: Sequence[int], axis: int) -> Tensor:
    """Reorder indices along one axis by a fixed permutation."""
    axis = _check_axis(x, axis, "permute_axis")
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(x.shape[axis])):
        raise DimensionError(f"permute_axis: not a permutation of axis {axis} of {x.shape}")
    inv = np.argsort(perm)

    def bw(g):
        return (np.ascontiguousarray(np.take(g, inv, axis=axis)),)

    return _make(np.ascontiguousarray(np.take(x.data, perm, axis=axis)), "permute_axis", (x,), bw)


def gather_rows(x: Tensor, idx) -> Tensor:
    """out[i] = x[i, idx[i]] for a 2-D x."""
    if x.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D tensor, got {x.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows: index shape {idx.shape} does not match rows of {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise IndexError(f"gather_rows: index out of range [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])

    def bw(g):
        out = np.zeros_like(x.data)
        out[rows, idx] = g
        return (out,)

    return _make(x.data[rows, idx], "gather_rows", (x,), bw)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward_grads(loss: Tensor) -> dict[int, tuple[Tensor, np.ndarray]]:
    """Run reverse-mode accumulation and return {id(leaf): (leaf, grad)}
    for every tracked leaf, without touching any leaf's `.grad`. This is
    the reduction-point API for batch sharding."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not track any parameters")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    for t in reversed(_toposort(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            leaves[id(t)] = (t, g)
            continue
        input_grads = t.node.backward_fn(g)
        for inp, ig in zip(t.node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            grads[id(inp)] = ig if prev is None else prev + ig
    return leaves


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every tracked leaf's `.grad`.
    Repeated calls without zero_grad add up."""
    for leaf, g in backward_grads(loss).values():
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class ParamCheck:
    index: int
    checked: int
    max_rel_err: float
    worst_entry: int
    analytic: float
    numeric: float
    nonfinite: int

    @property
    def passed(self) -> bool:
        return self.nonfinite == 0 and math.isfinite(self.max_rel_err)


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params) and self.max_rel_err < self.tol

    def lines(self) -> list[str]:
        out = []
        for p in self.params:
            status = "ok" if (p.passed and p.max_rel_err < self.tol) else "FAIL"
            out.append(
                f"param[{p.index}] checked={p.checked} max_rel_err={p.max_rel_err:.3e} "
                f"(entry {p.worst_entry}: analytic={p.analytic:.6e} numeric={p.numeric:.6e}) {status}"
            )
        return out


# Relative error floors here: below this magnitude the comparison is
# effectively absolute, which keeps finite-difference roundoff (~1e-10)
# from swamping legitimately tiny gradients.
_REL_ERR_FLOOR = 1e-3


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), _REL_ERR_FLOOR)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar f() against central
    differences, parameter by parameter.

    f must rebuild its graph from the current parameter data on every
    call. When max_entries is set, entries are subsampled on an evenly
    spaced deterministic grid.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    loss = f()
    if loss.requires_grad:
        analytic = {id_: g for id_, (_, g) in backward_grads(loss).items()}
    else:
        analytic = {}  # nothing tracked: analytic gradient is zero everywhere
    report = GradCheckReport(tol=tol, eps=eps)
    for pi, p in enumerate(params):
        a_full = analytic.get(id(p))
        if a_full is None:
            a_full = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        a_flat = a_full.reshape(-1)
        n_entries = flat.size
        if max_entries is not None and n_entries > max_entries:
            entries = np.unique(np.linspace(0, n_entries - 1, max_entries).round().astype(int))
        else:
            entries = np.arange(n_entries)
        worst = ParamCheck(pi, len(entries), 0.0, -1, 0.0, 0.0, 0)
        for i in entries:
            saved = flat[i]
            flat[i] = saved + eps
            with no_grad():
                lp = float(f().data.reshape(-1)[0])
            flat[i] = saved - eps
            with no_grad():
                lm = float(f().data.reshape(-1)[0])
            flat[i] = saved
            if not (math.isfinite(lp) and math.isfinite(lm)):
                worst.nonfinite += 1
                continue
            num = (lp - lm) / (2.0 * eps)
            err = _rel_err(float(a_flat[i]), num)
            if err >= worst.max_rel_err:
                worst.max_rel_err = err
                worst.worst_entry = int(i)
                worst.analytic = float(a_flat[i])
                worst.numeric = num
        report.params.append(worst)
    return report
