"""Small reverse-mode differentiation over dense float64 arrays (rank <= 2).

Forward values are computed eagerly when a primitive is called; each result
remembers its parents and a closure mapping the output gradient to parent
gradients. ``backward`` walks the graph in reverse topological order and
adds into the ``grad`` buffers of leaves that require gradients.

Broadcasting is limited to :func:`add_row` (row-vector bias). Constants
enter as plain arrays or leaves created with ``requires_grad=False``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

CHECKPOINT_MAGIC = b"GNNW"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class DiffTensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "op", "name")

    def __init__(self, value, requires_grad: bool = False, parents=(), backward=None,
                 op: str = "leaf", name: Optional[str] = None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(f"{op}: rank {value.ndim} > 2")
        self.value = value
        self.grad = np.zeros_like(value) if requires_grad and op == "leaf" else None
        self.requires_grad = requires_grad
        self.parents = parents
        self._backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"DiffTensor({label}, shape={self.shape})"

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __mul__ = lambda self, other: mul(self, other)
    __matmul__ = lambda self, other: matmul(self, other)


def const(value) -> DiffTensor:
    return value if isinstance(value, DiffTensor) else DiffTensor(value)


def _node(value, parents, backward, op) -> DiffTensor:
    needs = any(p.requires_grad for p in parents)
    return DiffTensor(value, needs, parents if needs else (), backward if needs else None, op)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> DiffTensor:
    a, b = const(a), const(b)
    _same_shape("add", a, b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> DiffTensor:
    a, b = const(a), const(b)
    _same_shape("sub", a, b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> DiffTensor:
    a, b = const(a), const(b)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a, c: float) -> DiffTensor:
    a = const(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a, c: float) -> DiffTensor:
    a = const(a)
    return _node(a.value + float(c), (a,), lambda g: (g,), "add_scalar")


def matmul(a, b) -> DiffTensor:
    a, b = const(a), const(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add_row(a, row) -> DiffTensor:
    """``a`` (n, k) plus a row vector ``row`` (1, k) or (k,) added to every row."""
    a, row = const(a), const(row)
    if a.value.ndim != 2 or row.value.size != a.shape[1] or row.value.ndim == 0:
        raise ShapeError(f"add_row: incompatible shapes {a.shape} and {row.shape}")
    rshape = row.shape
    return _node(a.value + row.value.reshape(1, -1), (a, row),
                 lambda g: (g, g.sum(axis=0).reshape(rshape)), "add_row")


def relu(a) -> DiffTensor:
    a = const(a)
    mask = a.value > 0.0
    # np.maximum keeps NaN visible to the non-finite checks downstream
    return _node(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> DiffTensor:
    a = const(a)
    x = a.value
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(a) -> DiffTensor:
    """ln(1 + e^x), computed stably; its derivative is the sigmoid."""
    a = const(a)
    x = a.value
    e = np.exp(-np.abs(x))
    out = np.maximum(x, 0.0) + np.log1p(e)
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * s,), "softplus")


def log(a) -> DiffTensor:
    a = const(a)
    x = a.value
    with np.errstate(divide="ignore"):
        out = np.log(x)
    return _node(out, (a,), lambda g: (g / x,), "log")


def sqrt(a) -> DiffTensor:
    """Square root; the derivative at 0 is taken as 0."""
    a = const(a)
    x = a.value
    out = np.sqrt(x)
    safe = np.where(out > 0.0, out, 1.0)
    return _node(out, (a,), lambda g: (np.where(out > 0.0, g / (2.0 * safe), 0.0),), "sqrt")


def absolute(a) -> DiffTensor:
    a = const(a)
    sign = np.sign(a.value)
    return _node(np.abs(a.value), (a,), lambda g: (g * sign,), "abs")


def sum(a, axis: Optional[int] = None) -> DiffTensor:  # noqa: A001
    a = const(a)
    shape = a.shape
    if axis is None:
        return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    out = a.value.sum(axis=axis, keepdims=True)
    return _node(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a, axis: Optional[int] = None) -> DiffTensor:
    a = const(a)
    n = a.value.size if axis is None else a.shape[axis]
    if n == 0:
        raise ShapeError(f"mean: empty operand of shape {a.shape}")
    return scale(sum(a, axis), 1.0 / n)


def concat(parts, axis: int = 1) -> DiffTensor:
    parts = [const(p) for p in parts]
    vals = [p.value for p in parts]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from None
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis)
                     for k in range(len(parts)))

    return _node(out, tuple(parts), back, "concat")


def reshape(a, shape) -> DiffTensor:
    a = const(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def _masked_extreme(a, mask, pick, fill, op):
    a = const(a)
    mask = np.asarray(mask, dtype=bool)
    _same_shape(op, a, DiffTensor(mask.astype(float)))
    if a.value.ndim != 2:
        raise ShapeError(f"{op}: needs a matrix, got {a.shape}")
    vals = np.where(mask, a.value, fill)
    idx = pick(vals, axis=1)  # first occurrence on ties
    rows = np.arange(a.shape[0])
    has = mask.any(axis=1)
    out = np.where(has, vals[rows, idx], 0.0).reshape(-1, 1)

    def back(g):
        ga = np.zeros(a.shape)
        ga[rows[has], idx[has]] = g[has, 0]
        return (ga,)

    return _node(out, (a,), back, op)


def masked_max(a, mask) -> DiffTensor:
    """Row-wise max over entries where ``mask`` is true, shape (n, 1); 0 for empty rows."""
    return _masked_extreme(a, mask, np.argmax, -np.inf, "masked_max")


def masked_min(a, mask) -> DiffTensor:
    return _masked_extreme(a, mask, np.argmin, np.inf, "masked_min")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topo_order(root: DiffTensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: DiffTensor) -> None:
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is not None:
                node.grad += g
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


@dataclass
class ParamStore:
    params: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value) -> DiffTensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = DiffTensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> DiffTensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return int(np.sum([t.value.size for t in self.params.values()]))

    def snapshot(self) -> dict:
        return {k: t.value.copy() for k, t in self.params.items()}

    def load_values(self, values: dict) -> None:
        for k, v in values.items():
            if self.params[k].value.shape != np.shape(v):
                raise ShapeError(f"{k}: checkpoint shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k].value[...] = v


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update, then gradients are zeroed.

    ``weight_decay`` shrinks every value by ``lr * weight_decay`` before the
    moment-based step (decoupled decay); 0 gives plain Adam.
    """
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p.value -= lr * weight_decay * p.value
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g[...] = 0.0


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict  # parameter name -> worst component relative error
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_rel_error.items():
            status = "ok" if err <= self.tolerance else "FAIL"
            out.append(f"{name:<24s} {err:.3e} {status}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries meaningful."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn: Callable[[], DiffTensor], param: DiffTensor,
                     step: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = out.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + step
        hi = loss_fn().item()
        flat[k] = old - step
        lo = loss_fn().item()
        flat[k] = old
        gflat[k] = (hi - lo) / (2.0 * step)
    return out


def grad_check(loss_fn: Callable[[], DiffTensor], store: ParamStore, tolerance: float = 1e-5,
               step: float = 1e-5, floor: float = 1e-6,
               corrupt: Optional[Callable[[str, np.ndarray], np.ndarray]] = None) -> GradCheckReport:
    """Compare ``backward`` against central differences for every parameter.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    ``corrupt`` lets a test tamper with the analytic gradient (negative control).
    """
    store.zero_grad()
    loss_fn().backward()
    analytic = {k: t.grad.copy() for k, t in store.items()}
    store.zero_grad()
    errs = {}
    for name, p in store.items():
        a = analytic[name] if corrupt is None else corrupt(name, analytic[name])
        n = numeric_gradient(loss_fn, p, step)
        errs[name] = float(relative_error(a, n, floor).max(initial=0.0))
    return GradCheckReport(errs, tolerance)


# ---------------------------------------------------------------------------
# checkpoints: "GNNW", uint32 version, uint32 count, then per tensor
#   uint32 name length, UTF-8 name, uint32 ndim, ndim x uint32 dims, float64 data
# all little-endian, tensors in store order
# ---------------------------------------------------------------------------


def save_params(store: ParamStore, path) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", t.value.ndim) + struct.pack(f"<{t.value.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a GNNW checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(math.prod(shape))
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return out
