"""Small dense-array engine with reverse-mode gradients.

Every op takes and returns :class:`Array`.  When a :class:`Tape` is active on
the current thread and any input requires a gradient, the op appends a record
``(output, inputs, vjp)`` to it.  ``Tape.backward`` walks the records in reverse
order, so the record order doubles as the topological order.

    with Tape() as tape:
        loss = mean(square(matmul(x, w)))
    grads = tape.backward(loss)
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Array", "Tape", "NonFiniteError", "ShapeError", "ParameterError",
    "as_array", "parameter", "constant",
    "add", "sub", "mul", "div", "neg", "square", "exp", "log", "tanh", "gelu",
    "abs_", "matmul", "einsum", "sum_", "mean", "reshape", "transpose",
    "gather", "take", "concat", "stack", "logsumexp", "softmax", "log_softmax",
    "layer_norm", "sqeuclid_dist", "where", "numerical_grad", "max_rel_err",
]

# Op-boundary NaN/Inf detection; disable only for timing experiments.
CHECK_FINITE = True

_state = threading.local()


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class Array:
    """Immutable float64 array node.

    ``data`` is never written in place; optimizers rebind it to a fresh array.
    """

    __slots__ = ("_data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value) -> None:
        arr = np.array(value, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, value: np.ndarray, requires_grad: bool) -> "Array":
        # op outputs are fresh arrays or views of read-only inputs; no copy
        out = cls.__new__(cls)
        if value.flags.writeable:
            value.setflags(write=False)
        out._data = value
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    def numpy(self) -> np.ndarray:
        return self._data

    def item(self) -> float:
        return float(self._data.item())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Array(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __truediv__ = lambda self, other: div(self, other)  # noqa: E731
    __rtruediv__ = lambda self, other: div(other, self)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731

    def __getitem__(self, index):
        return gather(self, index)

    @property
    def T(self) -> "Array":
        return transpose(self)


def as_array(x) -> Array:
    return x if isinstance(x, Array) else Array(x)


def parameter(data, name: str | None = None) -> Array:
    return Array(data, requires_grad=True, name=name)


def constant(data) -> Array:
    return Array(data, requires_grad=False)


class Tape:
    """Ordered op record for one forward/backward pass.

    A tape is bound to the thread that entered it; nesting is allowed and
    the innermost tape records.
    """

    def __init__(self):
        self.records: list[tuple[Array, tuple[Array, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Array) -> dict[Array, np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. every leaf that requires grad.

        Leaf ``.grad`` attributes are overwritten with the result.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(rec[0]) for rec in self.records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Array] = {}
        for out, inputs, vjp in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = vjp(g)
            for node, gi in zip(inputs, in_grads):
                if gi is None or not node.requires_grad:
                    continue
                key = id(node)
                if key not in produced:
                    leaves[key] = node
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = {}
        for key, node in leaves.items():
            g = grads.get(key, np.zeros_like(node.data))
            node.grad = g
            result[node] = g
        return result


def _active_tape() -> Tape | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _check(name: str, value: np.ndarray) -> None:
    # NaN/Inf always survive a sum; only a non-finite sum needs the full scan
    if CHECK_FINITE and not np.isfinite(np.sum(value)) and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by {name}")


def _emit(name: str, value: np.ndarray, inputs: Sequence[Array], vjp: Callable) -> Array:
    _check(name, value)
    needs = any(a.requires_grad for a in inputs)
    out = Array._wrap(np.asarray(value, dtype=np.float64), needs)
    tape = _active_tape() if needs else None
    if tape is not None:
        tape.records.append((out, tuple(inputs), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(name: str, a: Array, b: Array) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise -----------------------------------------------------------------

def add(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Array:
    a = as_array(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def square(a) -> Array:
    a = as_array(a)
    return _emit("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Array:
    a = as_array(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a, floor: float = 0.0) -> Array:
    """Natural log; with ``floor > 0`` inputs are clamped to ``floor`` first
    and the clamped entries get zero gradient."""
    a = as_array(a)
    x = a.data
    if floor > 0.0:
        mask = x > floor
        x = np.where(mask, x, floor)
        return _emit("log", np.log(x), (a,), lambda g: (g * mask / x,))
    return _emit("log", np.log(x), (a,), lambda g: (g / x,))


def tanh(a) -> Array:
    a = as_array(a)
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Array:
    """tanh-approximated GELU (the GPT-2 variant)."""
    a = as_array(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _emit("gelu", out, (a,), vjp)


def abs_(a) -> Array:
    a = as_array(a)
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def where(cond, a, b) -> Array:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_array(a), as_array(b)
    return _emit("where", np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# linear algebra --------------------------------------------------------------

def matmul(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    if b.ndim == 2:
        # stacked x matrix: fold the stack into rows so BLAS sees one product
        k = a.shape[-1]
        a2 = a.data.reshape(-1, k)
        value = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[1])

        def vjp2(g):
            g2 = g.reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _emit("matmul", value, (a, b), vjp2)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", np.matmul(a.data, b.data), (a, b), vjp)


def einsum(subscripts: str, a, b) -> Array:
    """Two-operand einsum with explicit output, e.g. ``"bpd,nd->bpn"``.

    Every index of an operand must appear in the output or the other operand.
    """
    a, b = as_array(a), as_array(b)
    lhs, out_s = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        for ch in own:
            if ch not in out_s and ch not in other:
                raise ShapeError(f"einsum index {ch!r} is reduced in one operand only")
    try:
        value = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts}: {exc}") from None

    def vjp(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_s},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return _emit("einsum", value, (a, b), vjp)


# reductions and shape ops ----------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Array:
    a = as_array(a)
    return _emit("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Array:
    a = as_array(a)
    count = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)])
    return _emit("mean", np.mean(a.data, axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims) / count,))


def reshape(a, shape) -> Array:
    a = as_array(a)
    try:
        value = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _emit("reshape", value, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Array:
    a = as_array(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _emit("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def gather(a, index) -> Array:
    """Basic or fancy indexing, ``a[index]``; repeated indices accumulate."""
    a = as_array(a)
    try:
        value = a.data[index]
    except IndexError as exc:
        raise ShapeError(str(exc)) from None

    basic = _is_basic(index)

    def vjp(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _emit("gather", value, (a,), vjp)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def take(a, indices, axis: int) -> Array:
    a = as_array(a)
    indices = np.asarray(indices)
    axis = axis % a.ndim
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[axis]):
        raise ShapeError(f"take: index out of range for axis of extent {a.shape[axis]}")

    def vjp(g):
        full = np.zeros(a.shape)
        # move indexed axes so add.at sees the same layout np.take produced
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)),
                         list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return _emit("take", np.take(a.data, indices, axis=axis), (a,), vjp)


def concat(arrays: Sequence, axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    try:
        value = np.concatenate([x.data for x in arrays], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return _emit("concat", value, arrays,
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(arrays: Sequence, axis: int = 0) -> Array:
    arrays = [as_array(x) for x in arrays]
    try:
        value = np.stack([x.data for x in arrays], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    n = len(arrays)
    return _emit("stack", value, arrays,
                 lambda g: tuple(np.squeeze(part, axis=axis)
                                 for part in np.split(g, n, axis=axis)))


# probability ops -------------------------------------------------------------

def _np_logsumexp(x: np.ndarray, axis, keepdims: bool = False) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def logsumexp(a, axis=-1, keepdims: bool = False) -> Array:
    a = as_array(a)
    out_k = _np_logsumexp(a.data, axis, keepdims=True)
    weights = np.exp(a.data - out_k)
    value = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _emit("logsumexp", value, (a,), vjp)


def softmax(a, axis=-1, temperature: float = 1.0) -> Array:
    if not temperature > 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    a = as_array(a)
    x = a.data / temperature
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner) / temperature,)

    return _emit("softmax", out, (a,), vjp)


def log_softmax(a, axis=-1) -> Array:
    a = as_array(a)
    out = a.data - _np_logsumexp(a.data, axis, keepdims=True)
    probs = np.exp(out)
    return _emit("log_softmax", out, (a,),
                 lambda g: (g - probs * np.sum(g, axis=axis, keepdims=True),))


def layer_norm(a, weight=None, bias=None, eps: float = 1e-5) -> Array:
    """Normalize over the last axis, then optional affine ``weight``/``bias``."""
    a = as_array(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def vjp(g):
        n = x.shape[-1]
        gx = inv * (g - g.mean(axis=-1, keepdims=True)
                    - xhat * (g * xhat).sum(axis=-1, keepdims=True) / n)
        return (gx,)

    out = _emit("layer_norm", xhat, (a,), vjp)
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def sqeuclid_dist(x, mu) -> Array:
    """Squared distances ``||x_i - mu_n||^2``: ``x[..., d]``, ``mu[N, d]`` -> ``[..., N]``."""
    x, mu = as_array(x), as_array(mu)
    if mu.ndim != 2 or x.shape[-1] != mu.shape[-1]:
        raise ShapeError(f"sqeuclid_dist: shapes {x.shape} and {mu.shape}")
    diff = x.data[..., None, :] - mu.data
    value = np.einsum("...nd,...nd->...n", diff, diff)

    def vjp(g):
        gd = 2.0 * g[..., None] * diff
        gmu = -gd.reshape(-1, *mu.shape).sum(axis=0)
        return gd.sum(axis=-2), gmu

    return _emit("sqeuclid_dist", value, (x, mu), vjp)


# gradient checking -----------------------------------------------------------

def numerical_grad(fn: Callable[[], float], param: Array, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param.data``."""
    base = param.data.copy()
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        param.data = base
        f_plus = fn()
        flat[i] = old - h
        param.data = base
        f_minus = fn()
        flat[i] = old
        grad.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * h)
    param.data = base
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is close to zero from turning
    finite-difference round-off into a huge ratio.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
