"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Tensors are plain ``numpy.ndarray`` objects of shape ``(rows, cols)`` and
dtype float64. A :class:`Graph` records every operation applied to its nodes
in insertion order, so the insertion order is already a topological order and
:meth:`Graph.backward` is a single reverse sweep.

The graph is rebuilt for every batch; nothing is cached across batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericError

# norm padding for cosine similarity, keeps all-zero rows finite
COSINE_EPS = 1e-12

OP_KINDS = frozenset(
    {
        "matmul",
        "add",
        "sub",
        "mul",
        "concat_cols",
        "sigmoid",
        "tanh",
        "relu",
        "exp",
        "log",
        "mean_all",
        "sum",
        "scalar_mul",
        "row_cosine",
        "transpose",
        "slice_rows",
    }
)


def as_tensor(value, name: str = "tensor") -> np.ndarray:
    """Coerce ``value`` to a finite float64 matrix.

    Scalars become ``1x1`` and 1-D sequences become a single column.
    """
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains NaN or infinity")
    return arr


def _broadcast_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape:
        return
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{kind}: cannot broadcast {a.shape} with {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


# Each op is (forward, backward).
#   forward(inputs, attrs) -> (output, cache)
#   backward(grad_out, inputs, output, cache, attrs) -> tuple of input grads


def _matmul_fwd(xs, attrs):
    a, b = xs
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b, None


def _matmul_bwd(g, xs, out, cache, attrs):
    a, b = xs
    return g @ b.T, a.T @ g


def _add_fwd(xs, attrs):
    _broadcast_shape("add", *xs)
    return xs[0] + xs[1], None


def _add_bwd(g, xs, out, cache, attrs):
    return _unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)


def _sub_fwd(xs, attrs):
    _broadcast_shape("sub", *xs)
    return xs[0] - xs[1], None


def _sub_bwd(g, xs, out, cache, attrs):
    return _unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)


def _mul_fwd(xs, attrs):
    _broadcast_shape("mul", *xs)
    return xs[0] * xs[1], None


def _mul_bwd(g, xs, out, cache, attrs):
    a, b = xs
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _concat_fwd(xs, attrs):
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=1), None


def _concat_bwd(g, xs, out, cache, attrs):
    grads = []
    start = 0
    for x in xs:
        stop = start + x.shape[1]
        grads.append(g[:, start:stop])
        start = stop
    return tuple(grads)


def _sigmoid_fwd(xs, attrs):
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * xs[0]), None


def _sigmoid_bwd(g, xs, out, cache, attrs):
    return (g * out * (1.0 - out),)


def _tanh_fwd(xs, attrs):
    return np.tanh(xs[0]), None


def _tanh_bwd(g, xs, out, cache, attrs):
    return (g * (1.0 - out * out),)


def _relu_fwd(xs, attrs):
    return np.maximum(xs[0], 0.0), None


def _relu_bwd(g, xs, out, cache, attrs):
    return (g * (xs[0] > 0),)


def _exp_fwd(xs, attrs):
    # overflow is reported by the finite check, not as a warning
    with np.errstate(over="ignore"):
        return np.exp(xs[0]), None


def _exp_bwd(g, xs, out, cache, attrs):
    return (g * out,)


def _log_fwd(xs, attrs):
    (x,) = xs
    if (x <= 0).any():
        raise DomainError("log of a non-positive entry")
    return np.log(x), None


def _log_bwd(g, xs, out, cache, attrs):
    return (g / xs[0],)


def _mean_fwd(xs, attrs):
    return np.array([[xs[0].mean()]]), None


def _mean_bwd(g, xs, out, cache, attrs):
    x = xs[0]
    return (np.full(x.shape, g[0, 0] / x.size),)


def _sum_fwd(xs, attrs):
    axis = attrs.get("axis")
    x = xs[0]
    if axis is None:
        return np.array([[x.sum()]]), None
    return x.sum(axis=axis, keepdims=True), None


def _sum_bwd(g, xs, out, cache, attrs):
    return (np.broadcast_to(g, xs[0].shape).copy(),)


def _scale_fwd(xs, attrs):
    return xs[0] * attrs["c"], None


def _scale_bwd(g, xs, out, cache, attrs):
    return (g * attrs["c"],)


def _cosine_fwd(xs, attrs):
    a, b = xs
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"row_cosine: column counts differ {a.shape} vs {b.shape}")
    na = np.sqrt((a * a).sum(axis=1, keepdims=True))
    nb = np.sqrt((b * b).sum(axis=1, keepdims=True))
    denom = (na + COSINE_EPS) * (nb + COSINE_EPS).T
    out = (a @ b.T) / denom
    return out, (na, nb, denom)


def _cosine_bwd(g, xs, out, cache, attrs):
    a, b = xs
    na, nb, denom = cache
    gd = g / denom
    gc = g * out
    # d|x|/dx = x/|x|; zero rows contribute nothing, so guard the division
    safe_na = np.where(na > 0, na, 1.0)
    safe_nb = np.where(nb > 0, nb, 1.0)
    da = gd @ b - a * (gc.sum(axis=1, keepdims=True) / ((na + COSINE_EPS) * safe_na))
    db = gd.T @ a - b * (gc.sum(axis=0)[:, None] / ((nb + COSINE_EPS) * safe_nb))
    return da, db


def _transpose_fwd(xs, attrs):
    return xs[0].T.copy(), None


def _transpose_bwd(g, xs, out, cache, attrs):
    return (g.T,)


def _slice_fwd(xs, attrs):
    x = xs[0]
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError(f"slice_rows [{start}:{stop}] out of range for {x.shape}")
    return x[start:stop].copy(), None


def _slice_bwd(g, xs, out, cache, attrs):
    full = np.zeros_like(xs[0])
    full[attrs["start"] : attrs["stop"]] = g
    return (full,)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "mul": (_mul_fwd, _mul_bwd),
    "concat_cols": (_concat_fwd, _concat_bwd),
    "sigmoid": (_sigmoid_fwd, _sigmoid_bwd),
    "tanh": (_tanh_fwd, _tanh_bwd),
    "relu": (_relu_fwd, _relu_bwd),
    "exp": (_exp_fwd, _exp_bwd),
    "log": (_log_fwd, _log_bwd),
    "mean_all": (_mean_fwd, _mean_bwd),
    "sum": (_sum_fwd, _sum_bwd),
    "scalar_mul": (_scale_fwd, _scale_bwd),
    "row_cosine": (_cosine_fwd, _cosine_bwd),
    "transpose": (_transpose_fwd, _transpose_bwd),
    "slice_rows": (_slice_fwd, _slice_bwd),
}

# hyphenated spellings used in prose and configs
_ALIASES = {
    "elementwise-mul": "mul",
    "concat-cols": "concat_cols",
    "mean-all": "mean_all",
    "scalar-mul": "scalar_mul",
    "row-cosine-similarity": "row_cosine",
    "slice-rows": "slice_rows",
}

# Non-finite values can only appear through overflow (exp, matmul) and any
# that do reach a loss pass through a reduction, so only these are checked.
_CHECKED = frozenset({"exp", "matmul", "sum", "mean_all", "row_cosine", "scalar_mul"})

_UNARY = {"sigmoid", "tanh", "relu", "exp", "log", "mean_all", "sum", "scalar_mul", "transpose", "slice_rows"}
_BINARY = {"matmul", "add", "sub", "mul", "row_cosine"}


class Node:
    """Handle to one value recorded in a :class:`Graph`."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, id_: int):
        self.graph = graph
        self.id = id_

    @property
    def value(self) -> np.ndarray:
        return self.graph._values[self.id]

    @property
    def shape(self) -> tuple[int, int]:
        return self.graph._values[self.id].shape

    def item(self) -> float:
        v = self.value
        if v.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {v.shape}")
        return float(v[0, 0])

    def __repr__(self) -> str:
        return f"Node(id={self.id}, kind={self.graph._records[self.id][0]}, shape={self.shape})"

    def _lift(self, other) -> Node:
        if isinstance(other, Node):
            return other
        return self.graph.constant(other)

    def __add__(self, other):
        return self.graph.apply("add", self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.apply("scalar_mul", self, c=float(other))
        return self.graph.apply("mul", self, self._lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.apply("scalar_mul", self, c=-1.0)

    def __matmul__(self, other):
        return self.graph.apply("matmul", self, self._lift(other))

    @property
    def T(self) -> Node:
        return self.graph.apply("transpose", self)

    def sigmoid(self) -> Node:
        return self.graph.apply("sigmoid", self)

    def tanh(self) -> Node:
        return self.graph.apply("tanh", self)

    def relu(self) -> Node:
        return self.graph.apply("relu", self)

    def exp(self) -> Node:
        return self.graph.apply("exp", self)

    def log(self) -> Node:
        return self.graph.apply("log", self)

    def mean(self) -> Node:
        return self.graph.apply("mean_all", self)

    def sum(self, axis: int | None = None) -> Node:
        return self.graph.apply("sum", self, axis=axis)

    def slice_rows(self, start: int, stop: int) -> Node:
        return self.graph.apply("slice_rows", self, start=start, stop=stop)

    def cosine(self, other: Node) -> Node:
        return self.graph.apply("row_cosine", self, self._lift(other))


class Graph:
    """Define-by-run tape of 2-D tensor operations.

    Parameters
    ----------
    check_finite : bool
        Raise :class:`NumericError` as soon as any op produces NaN or infinity.
    """

    def __init__(self, check_finite: bool = True):
        self.check_finite = check_finite
        self._values: list[np.ndarray] = []
        self._needs_grad: list[bool] = []
        # (kind, input ids, cache, attrs) per node
        self._records: list[tuple] = []
        self._leaf_names: dict[int, str] = {}

    def __len__(self) -> int:
        return len(self._values)

    def _push(self, kind, inputs, value, cache, attrs, needs_grad) -> Node:
        self._records.append((kind, inputs, cache, attrs))
        self._values.append(value)
        self._needs_grad.append(needs_grad)
        return Node(self, len(self._values) - 1)

    def leaf(self, value, name: str | None = None, requires_grad: bool = True) -> Node:
        """Register a leaf tensor; trainable leaves get a gradient from :meth:`backward`."""
        arr = as_tensor(value, name or "leaf")
        node = self._push("leaf", (), arr, None, {}, requires_grad)
        if requires_grad:
            self._leaf_names[node.id] = name if name is not None else f"leaf{node.id}"
        return node

    def constant(self, value) -> Node:
        return self.leaf(value, requires_grad=False)

    def apply(self, kind: str, *inputs: Node, **attrs) -> Node:
        """Run ``kind`` forward on ``inputs`` and record it."""
        op = _OPS.get(kind)
        if op is None:
            kind = _ALIASES.get(kind, kind)
            op = _OPS.get(kind)
            if op is None:
                raise ContractError(f"unknown op kind {kind!r}")
        n_in = len(inputs)
        if n_in == 0 or (n_in != 1 and kind in _UNARY) or (n_in != 2 and kind in _BINARY):
            raise ContractError(f"{kind} got {n_in} inputs")
        values = self._values
        needs_flags = self._needs_grad
        ids = []
        needs = False
        for node in inputs:
            if node.graph is not self:
                raise ContractError("input node belongs to a different graph")
            ids.append(node.id)
            needs = needs or needs_flags[node.id]
        out, cache = op[0]([values[i] for i in ids], attrs)
        if self.check_finite and kind in _CHECKED and not np.isfinite(out).all():
            raise NumericError(f"{kind} produced NaN or infinity")
        return self._push(kind, tuple(ids), out, cache, attrs, needs)

    def backward(self, root: Node) -> dict[str, np.ndarray]:
        """Gradients of the scalar ``root`` with respect to every trainable leaf.

        Leaves that do not influence ``root`` get a zero gradient.
        """
        if root.graph is not self:
            raise ContractError("root belongs to a different graph")
        if root.shape != (1, 1):
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[root.id] = np.ones((1, 1))
        for i in range(root.id, -1, -1):
            g = grads[i]
            if g is None or not self._needs_grad[i]:
                continue
            kind, ids, cache, attrs = self._records[i]
            if kind == "leaf":
                continue
            xs = [self._values[j] for j in ids]
            in_grads = _OPS[kind][1](g, xs, self._values[i], cache, attrs)
            for j, gj in zip(ids, in_grads):
                if not self._needs_grad[j]:
                    continue
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj
        out = {}
        for node_id, name in self._leaf_names.items():
            g = grads[node_id]
            out[name] = np.zeros_like(self._values[node_id]) if g is None else np.asarray(g, dtype=np.float64)
        return out


def forward(graph: Graph, kind: str, *inputs: Node, **attrs) -> int:
    """Functional spelling of :meth:`Graph.apply` returning the node id."""
    return graph.apply(kind, *inputs, **attrs).id


def backward(graph: Graph, root: Node) -> dict[str, np.ndarray]:
    return graph.backward(root)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> AdamState:
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns a new array; ``state`` is updated in place."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam_step: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if state.lr <= 0:
        raise ContractError("learning rate must be positive")
    if not np.isfinite(grad).all():
        raise NumericError("gradient contains NaN or infinity")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


@dataclass
class Adam:
    """Adam over a dict of named parameters.

    Moments live in one flat buffer per parameter set, which keeps the update
    to a handful of vector operations. :attr:`states` exposes per-name views.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _names: tuple = field(default=(), repr=False)
    _m: np.ndarray | None = field(default=None, repr=False)
    _v: np.ndarray | None = field(default=None, repr=False)

    def _layout(self, params, names):
        sizes = [params[n].size for n in names]
        self._names = tuple(names)
        self._shapes = [params[n].shape for n in names]
        self._offsets = np.cumsum([0] + sizes)
        self._m = np.zeros(self._offsets[-1])
        self._v = np.zeros(self._offsets[-1])

    @property
    def states(self) -> dict[str, AdamState]:
        out = {}
        if self._m is None:
            return out
        for k, n in enumerate(self._names):
            a, b = self._offsets[k], self._offsets[k + 1]
            shape = self._shapes[k]
            out[n] = AdamState(self._m[a:b].reshape(shape), self._v[a:b].reshape(shape), self.t, self.lr, self.beta1, self.beta2, self.eps)
        return out

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        names = tuple(grads)
        if self._m is None:
            self._layout(params, names)
        elif names != self._names:
            raise ContractError(f"parameter set changed: {names} vs {self._names}")
        g = np.concatenate([np.ravel(grads[n]) for n in names])
        if not np.isfinite(g).all():
            raise NumericError("gradient contains NaN or infinity")
        self.t += 1
        self._m *= self.beta1
        self._m += (1.0 - self.beta1) * g
        self._v *= self.beta2
        self._v += (1.0 - self.beta2) * (g * g)
        m_hat = self._m / (1.0 - self.beta1**self.t)
        v_hat = self._v / (1.0 - self.beta2**self.t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        offs = self._offsets
        for k, n in enumerate(names):
            p = params[n]
            params[n] = p - update[offs[k] : offs[k + 1]].reshape(p.shape)
