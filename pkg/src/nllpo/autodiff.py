"""Tape-based reverse-mode differentiation over numpy arrays.

Every differentiable operation appends a node to a :class:`Tape`. A backward
pass walks the tape in reverse. Backward rules are written with the same
operations as the forward pass, so running backward with
``create_graph=True`` records the gradient computation itself; that gives
Hessian-vector products and mixed second derivatives by differentiating a
gradient again.

Functions in this module accept plain arrays as well as :class:`Var` and fall
back to numpy when no argument is being traced, so model code is written once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteLoss, UnsupportedPrimitive


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value) -> "Var":
        return self._push(np.array(value, dtype=float), None, (), {})

    def _push(self, value, prim, args, kwargs) -> "Var":
        var = Var(value, self, len(self.nodes), prim, args, kwargs)
        self.nodes.append(var)
        return var

    def backward(self, root: "Var", create_graph: bool = False) -> dict[int, object]:
        """Return adjoints keyed by node index for every node reachable from ``root``."""
        if root.tape is not self:
            raise ValueError("root was recorded on a different tape")
        if np.ndim(root.value) != 0:
            raise ValueError("backward needs a scalar root")
        grads: dict[int, object] = {root.index: np.ones_like(root.value)}
        leaves: dict[int, object] = {}
        for i in range(root.index, -1, -1):
            if i not in grads:
                continue
            node = self.nodes[i]
            g = grads.pop(i)
            if node.prim is None:
                leaves[i] = g
                continue
            if create_graph:
                args = node.args
                ans = node
            else:
                args = tuple(a.value if isinstance(a, Var) else a for a in node.args)
                ans = node.value
                if isinstance(g, Var):
                    g = g.value
            rules = _VJP[node.prim]
            for k, arg in enumerate(node.args):
                if not isinstance(arg, Var) or arg.tape is not self:
                    continue
                contrib = rules[k](g, ans, *args, **node.kwargs)
                j = arg.index
                grads[j] = contrib if j not in grads else grads[j] + contrib
        return leaves


class Var:
    """A traced array value living on a :class:`Tape`."""

    __slots__ = ("value", "tape", "index", "prim", "args", "kwargs")
    __array_priority__ = 1000

    def __init__(self, value, tape, index, prim, args, kwargs):
        self.value = value
        self.tape = tape
        self.index = index
        self.prim = prim
        self.args = args
        self.kwargs = kwargs

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    @property
    def size(self):
        return np.size(self.value)

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var({self.value!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        fn = _UFUNCS.get(ufunc)
        if method != "__call__" or fn is None or kwargs:
            raise UnsupportedPrimitive(f"numpy ufunc {ufunc.__name__}.{method} is not differentiable here")
        return fn(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        fn = _ARRAY_FUNCS.get(func)
        if fn is None:
            raise UnsupportedPrimitive(f"numpy function {func.__name__} is not differentiable here")
        return fn(*args, **kwargs)

    def __bool__(self):
        raise TypeError("truth value of a traced Var is undefined")


# ---------------------------------------------------------------------------
# primitive registry

_FWD: dict[str, Callable] = {}
_VJP: dict[str, tuple[Callable, ...]] = {}


def _raw(x):
    return x.value if isinstance(x, Var) else x


def _apply(prim: str, *args, **kwargs):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands were recorded on different tapes")
    value = _FWD[prim](*(_raw(a) for a in args), **kwargs)
    if tape is None:
        return value
    return tape._push(np.asarray(value, dtype=float), prim, args, kwargs)


def _defprim(name: str, fwd: Callable, *vjps: Callable) -> Callable:
    _FWD[name] = fwd
    _VJP[name] = vjps

    def op(*args, **kwargs):
        return _apply(name, *args, **kwargs)

    op.__name__ = name
    return op


def is_traced(x) -> bool:
    return isinstance(x, Var)


def value_of(x):
    """Strip tracing; returns the underlying array."""
    return _raw(x)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    gshape = np.shape(_raw(g))
    if gshape == tuple(shape):
        return g
    lead = len(gshape) - len(shape)
    if lead > 0:
        g = sum_(g, axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and np.shape(_raw(g))[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


# elementwise arithmetic
add = _defprim(
    "add",
    np.add,
    lambda g, ans, x, y: unbroadcast(g, np.shape(_raw(x))),
    lambda g, ans, x, y: unbroadcast(g, np.shape(_raw(y))),
)
subtract = _defprim(
    "subtract",
    np.subtract,
    lambda g, ans, x, y: unbroadcast(g, np.shape(_raw(x))),
    lambda g, ans, x, y: unbroadcast(negative(g), np.shape(_raw(y))),
)
multiply = _defprim(
    "multiply",
    np.multiply,
    lambda g, ans, x, y: unbroadcast(g * y, np.shape(_raw(x))),
    lambda g, ans, x, y: unbroadcast(g * x, np.shape(_raw(y))),
)
divide = _defprim(
    "divide",
    np.divide,
    lambda g, ans, x, y: unbroadcast(g / y, np.shape(_raw(x))),
    lambda g, ans, x, y: unbroadcast(negative(g) * ans / y, np.shape(_raw(y))),
)
negative = _defprim("negative", np.negative, lambda g, ans, x: negative(g))


def _power_fwd(x, p):
    return np.power(x, p)


_power = _defprim("power", _power_fwd, lambda g, ans, x, p: g * p * power(x, p - 1))


def power(x, p):
    if isinstance(p, Var):
        raise UnsupportedPrimitive("power with a traced exponent")
    p = float(p)
    if p == 1.0:
        return x
    if p == 0.0:
        return np.ones_like(_raw(x))
    return _power(x, p)


exp = _defprim("exp", np.exp, lambda g, ans, x: g * ans)
log = _defprim("log", np.log, lambda g, ans, x: g / x)
tanh = _defprim("tanh", np.tanh, lambda g, ans, x: g * (1.0 - ans * ans))


def sqrt(x):
    return power(x, 0.5)


def square(x):
    return x * x


def _relu_fwd(x):
    return np.maximum(x, 0.0)


# derivative 0 at the kink
relu = _defprim("relu", _relu_fwd, lambda g, ans, x: g * (_raw(x) > 0).astype(float))


def _clip_fwd(x, lo, hi):
    return np.clip(x, lo, hi)


# gradient is blocked where the clamp is active
clip = _defprim(
    "clip",
    _clip_fwd,
    lambda g, ans, x, lo, hi: g * ((_raw(x) > lo) & (_raw(x) < hi)).astype(float),
)


# shape and reductions
def _sum_fwd(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _sum_vjp(g, ans, x, axis=None, keepdims=False):
    shape = np.shape(_raw(x))
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        kept = tuple(1 if i in axes else s for i, s in enumerate(shape))
        g = reshape(g, kept)
    elif axis is None and not keepdims:
        g = reshape(g, (1,) * len(shape))
    return broadcast_to(g, shape)


sum_ = _defprim("sum", _sum_fwd, _sum_vjp)


def mean(x, axis=None, keepdims=False):
    shape = np.shape(_raw(x))
    if axis is None:
        count = int(np.prod(shape))
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))
    return sum_(x, axis=axis, keepdims=keepdims) / float(count)


def _broadcast_fwd(x, shape):
    return np.broadcast_to(x, shape).copy()


broadcast_to = _defprim(
    "broadcast_to", _broadcast_fwd, lambda g, ans, x, shape: unbroadcast(g, np.shape(_raw(x)))
)


def _reshape_fwd(x, shape):
    return np.reshape(x, shape)


_reshape = _defprim("reshape", _reshape_fwd, lambda g, ans, x, shape: reshape(g, np.shape(_raw(x))))


def reshape(x, shape):
    shape = tuple(shape) if not np.isscalar(shape) else (shape,)
    if np.shape(_raw(x)) == shape:
        return x
    return _reshape(x, shape)


def _transpose_fwd(x):
    # swaps the last two axes, so stacks of matrices transpose elementwise
    return np.swapaxes(x, -1, -2) if np.ndim(x) >= 2 else x


transpose = _defprim("transpose", _transpose_fwd, lambda g, ans, x: transpose(g))


def _getitem_fwd(x, index):
    return np.asarray(x[index])


def _scatter_fwd(g, index, shape):
    out = np.zeros(shape)
    np.add.at(out, index, g)
    return out


_scatter = _defprim("scatter", _scatter_fwd, lambda g, ans, x, index, shape: getitem(g, index))
getitem = _defprim(
    "getitem", _getitem_fwd, lambda g, ans, x, index: _scatter(g, index=index, shape=np.shape(_raw(x)))
)


def _matmul_vjp_x(g, ans, x, y):
    xs, ys = np.shape(_raw(x)), np.shape(_raw(y))
    if len(ys) == 1:
        if len(xs) == 1:
            return g * y
        return expand_dims(g, -1) * y
    if len(xs) == 1:
        return unbroadcast(matmul(y, expand_dims(g, -1))[..., 0], xs)
    return unbroadcast(matmul(g, transpose(y)), xs)


def _matmul_vjp_y(g, ans, x, y):
    xs, ys = np.shape(_raw(x)), np.shape(_raw(y))
    if len(xs) == 1:
        if len(ys) == 1:
            return g * x
        return unbroadcast(expand_dims(x, -1) * expand_dims(g, -2), ys)
    if len(ys) == 1:
        return sum_(x * expand_dims(g, -1), axis=tuple(range(len(xs) - 1)))
    return unbroadcast(matmul(transpose(x), g), ys)


matmul = _defprim("matmul", np.matmul, _matmul_vjp_x, _matmul_vjp_y)


def _logsumexp_fwd(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def _logsumexp_vjp(g, ans, x, axis=-1):
    g = expand_dims(g, axis)
    return g * exp(x - expand_dims(ans, axis))


logsumexp = _defprim("logsumexp", _logsumexp_fwd, _logsumexp_vjp)


def expand_dims(x, axis):
    shape = list(np.shape(_raw(x)))
    nd = len(shape) + 1
    shape.insert(axis % nd, 1)
    return reshape(x, tuple(shape))


def log_softmax(x, axis=-1):
    return x - expand_dims(logsumexp(x, axis=axis), axis)


def softmax(x, axis=-1):
    return exp(log_softmax(x, axis=axis))


# square-matrix functions, for closed-form objectives
def _inv_fwd(x):
    return np.linalg.inv(x)


inv = _defprim("inv", _inv_fwd, lambda g, ans, x: negative(matmul(matmul(transpose(ans), g), transpose(ans))))


def _logdet_fwd(x):
    sign, ld = np.linalg.slogdet(x)
    if sign <= 0:
        return np.nan
    return ld


logdet = _defprim("logdet", _logdet_fwd, lambda g, ans, x: g * transpose(inv(x)))


def trace(x):
    n = np.shape(_raw(x))[0]
    idx = np.arange(n)
    return sum_(getitem(x, (idx, idx)))


def diag(x):
    n = np.shape(_raw(x))[0]
    idx = np.arange(n)
    return getitem(x, (idx, idx))


def stop_gradient(x):
    return np.array(_raw(x), dtype=float)


def dot(x, y):
    return sum_(x * y)


_UFUNCS = {
    np.add: add,
    np.subtract: subtract,
    np.multiply: multiply,
    np.true_divide: divide,
    np.negative: negative,
    np.exp: exp,
    np.log: log,
    np.tanh: tanh,
    np.matmul: matmul,
    np.sqrt: sqrt,
    np.square: square,
}

_ARRAY_FUNCS = {
    np.sum: sum_,
    np.mean: mean,
    np.reshape: reshape,
    np.transpose: transpose,
    np.trace: trace,
    np.clip: lambda x, lo, hi: clip(x, lo=lo, hi=hi),
}


# ---------------------------------------------------------------------------
# parameter vectors


@dataclass
class ParamVector:
    """Flat parameter array with named, disjoint, covering segments.

    ``segments`` maps a name to ``(offset, shape)``. Use :meth:`view` to read a
    segment out of either the stored values or a traced copy of them.
    """

    values: np.ndarray
    segments: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).ravel()
        covered = 0
        for name, (offset, shape) in sorted(self.segments.items(), key=lambda kv: kv[1][0]):
            if offset != covered:
                raise ValueError(f"segment {name!r} leaves a gap or overlaps at offset {offset}")
            covered += int(np.prod(shape, dtype=int))
        if self.segments and covered != self.values.size:
            raise ValueError("segments do not cover the parameter vector")

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamVector":
        segments, chunks, offset = {}, [], 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=float)
            segments[name] = (offset, tuple(arr.shape))
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, segments)

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), dict(self.segments))

    def with_values(self, values) -> "ParamVector":
        values = np.array(values, dtype=float).ravel()
        if values.size != self.values.size:
            raise ValueError("new values have the wrong length")
        return ParamVector(values, dict(self.segments))

    def view(self, name: str, flat=None):
        flat = self.values if flat is None else flat
        offset, shape = self.segments[name]
        size = int(np.prod(shape, dtype=int))
        return reshape(getitem(flat, slice(offset, offset + size)), shape)

    def slice_of(self, name: str) -> slice:
        offset, shape = self.segments[name]
        return slice(offset, offset + int(np.prod(shape, dtype=int)))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.view(name)


def _flat(at) -> np.ndarray:
    if isinstance(at, ParamVector):
        return at.values
    return np.array(at, dtype=float)


def _check_loss(out) -> Var:
    if not isinstance(out, Var):
        return out
    if np.ndim(out.value) != 0:
        raise ValueError(f"loss must be a scalar, got shape {np.shape(out.value)}")
    if not np.isfinite(out.value):
        raise NonFiniteLoss(f"loss evaluated to {out.value}")
    return out


def value_and_grad(loss_fn: Callable, at) -> tuple[float, np.ndarray]:
    """Evaluate ``loss_fn`` at ``at`` and return ``(value, gradient)``."""
    x0 = _flat(at)
    tape = Tape()
    x = tape.leaf(x0)
    out = _check_loss(loss_fn(x))
    if not isinstance(out, Var):
        value = float(out)
        if not np.isfinite(value):
            raise NonFiniteLoss(f"loss evaluated to {value}")
        return value, np.zeros_like(x0)
    leaves = tape.backward(out)
    g = leaves.get(x.index)
    g = np.zeros_like(x0) if g is None else np.array(np.broadcast_to(_raw(g), x0.shape), dtype=float)
    return float(out.value), g


def gradient(loss_fn: Callable, at) -> np.ndarray:
    return value_and_grad(loss_fn, at)[1]


def _grad_var(tape: Tape, out: Var, leaf: Var):
    leaves = tape.backward(out, create_graph=True)
    return leaves.get(leaf.index)


def hvp(loss_fn: Callable, at, v) -> np.ndarray:
    """Hessian-vector product ``(d^2 loss) v`` by differentiating ``<grad, v>``."""
    x0 = _flat(at)
    v = np.asarray(v, dtype=float).reshape(x0.shape)
    tape = Tape()
    x = tape.leaf(x0)
    out = _check_loss(loss_fn(x))
    if not isinstance(out, Var):
        return np.zeros_like(x0)
    g = _grad_var(tape, out, x)
    if not isinstance(g, Var):
        return np.zeros_like(x0)
    inner = dot(g, v)
    leaves = tape.backward(inner)
    h = leaves.get(x.index)
    return np.zeros_like(x0) if h is None else np.array(np.broadcast_to(_raw(h), x0.shape), dtype=float)


def cross_grad(loss_fn: Callable, at_phi, at_theta, v) -> np.ndarray:
    """Return ``d/dphi <d loss/d theta, v>`` with ``v`` held constant.

    ``loss_fn`` takes ``(phi, theta)``.
    """
    p0, t0 = _flat(at_phi), _flat(at_theta)
    v = np.asarray(v, dtype=float).reshape(t0.shape)
    tape = Tape()
    phi = tape.leaf(p0)
    theta = tape.leaf(t0)
    out = _check_loss(loss_fn(phi, theta))
    if not isinstance(out, Var):
        return np.zeros_like(p0)
    g = _grad_var(tape, out, theta)
    if not isinstance(g, Var):
        return np.zeros_like(p0)
    leaves = tape.backward(dot(g, v))
    c = leaves.get(phi.index)
    return np.zeros_like(p0) if c is None else np.array(np.broadcast_to(_raw(c), p0.shape), dtype=float)


def finite_difference_grad(fn: Callable, at, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar numpy function; used as a test oracle."""
    x0 = _flat(at).copy()
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (float(fn(xp)) - float(fn(xm))) / (2 * h)
    return g
