"""Eager reverse-mode differentiation over numpy arrays.

Every op computes its forward value immediately and appends a node to the
tape; :meth:`Tape.backward` sweeps the list in reverse.  Values are arrays, so
one node usually stands for a whole batch.  Broadcasting follows numpy and is
undone in the backward pass.
"""

import logging
import math

import numpy as np

from . import kernels

_log = logging.getLogger(__name__)


class DomainError(ValueError):
    """An op was applied outside its domain (log of <= 0, division by 0, ...)."""


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Node:
    __slots__ = ("tape", "index", "value", "op", "parents", "vjp", "stop", "name")
    # make numpy defer to the reflected operators instead of broadcasting nodes
    __array_ufunc__ = None

    def __init__(self, tape, index, value, op, parents, vjp, stop=False, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.stop = stop
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}#{self.index}, shape={self.value.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


class Tape:
    """Append-only list of nodes plus a registry of named parameter leaves."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def _push(self, value, op, parents=(), vjp=None, stop=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        node = Node(self, len(self.nodes), value, op, tuple(parents), vjp, stop, name)
        self.nodes.append(node)
        return node

    def param(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        node = self._push(np.array(value, dtype=np.float64), "param", name=name)
        self.params[name] = node
        return node

    def const(self, value):
        return self._push(value, "const")

    def record(self, op, *inputs, **kwargs):
        """Apply a named op (``"mul"``, ``"softplus"``, ...) to inputs."""
        try:
            fn = OPS[op]
        except KeyError:
            raise ValueError(f"unknown op {op!r}") from None
        inputs = [self._lift(x) for x in inputs]
        return fn(*inputs, **kwargs)

    def _lift(self, x):
        if isinstance(x, Node):
            if x.tape is not self:
                raise ValueError("node belongs to a different tape")
            return x
        return self.const(x)

    def backward(self, out, seed=None):
        """Gradients of ``out`` with respect to every parameter leaf.

        ``out`` must be a scalar unless ``seed`` (the output cotangent) is given.
        """
        if seed is None:
            if out.value.size != 1:
                raise ValueError(f"backward needs a scalar output, got shape {out.value.shape}")
            seed = np.ones_like(out.value)
        grads = [None] * (out.index + 1)
        grads[out.index] = np.asarray(seed, dtype=np.float64)
        for i in range(out.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.stop or node.vjp is None:
                continue
            contribs = node.vjp(g)
            for parent, pg in zip(node.parents, contribs):
                if pg is None:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.value.shape)
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        return {
            name: (grads[n.index] if n.index <= out.index and grads[n.index] is not None
                   else np.zeros_like(n.value))
            for name, n in self.params.items()
        }


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ValueError("at least one operand must be a tape node")


def _lift(*xs):
    tape = _tape_of(*xs)
    return tape, [tape._lift(x) for x in xs]


def _check(cond, op, what, value):
    if not np.all(cond):
        bad = np.asarray(value)[~np.asarray(cond, dtype=bool)] if np.ndim(value) else value
        first = bad.ravel()[0] if np.ndim(bad) else bad
        raise DomainError(f"{op}: operand out of domain ({what}); offending value {first!r}")


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    tape, (a, b) = _lift(a, b)
    return tape._push(a.value + b.value, "add", (a, b), lambda g: (g, g))


def sub(a, b):
    tape, (a, b) = _lift(a, b)
    return tape._push(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def mul(a, b):
    tape, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    return tape._push(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    tape, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    _check(bv != 0.0, "div", "divisor != 0", bv)
    y = av / bv
    return tape._push(y, "div", (a, b), lambda g: (g / bv, -g * y / bv))


def neg(a):
    tape, (a,) = _lift(a)
    return tape._push(-a.value, "neg", (a,), lambda g: (-g,))


def exp(a):
    tape, (a,) = _lift(a)
    y = np.exp(a.value)
    return tape._push(y, "exp", (a,), lambda g: (g * y,))


def log(a):
    tape, (a,) = _lift(a)
    av = a.value
    _check(av > 0.0, "log", "x > 0", av)
    return tape._push(np.log(av), "log", (a,), lambda g: (g / av,))


def sqrt(a):
    tape, (a,) = _lift(a)
    av = a.value
    _check(av >= 0.0, "sqrt", "x >= 0", av)
    y = np.sqrt(av)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(y > 0.0, 0.5 * g / np.where(y > 0, y, 1.0), 0.0),)

    return tape._push(y, "sqrt", (a,), vjp)


def pow(a, p):
    """``a ** p``; ``p`` may be a python number or a node."""
    if not isinstance(p, Node):
        tape, (a,) = _lift(a)
        av = a.value
        p = float(p)
        if not float(p).is_integer():
            _check(av >= 0.0, "pow", "base >= 0 for fractional exponent", av)
        y = av**p
        return tape._push(y, "pow", (a,), lambda g: (g * p * av ** (p - 1.0),))
    tape, (a, pn) = _lift(a, p)
    av, pv = a.value, pn.value
    _check(av > 0.0, "pow", "base > 0 for node exponent", av)
    y = av**pv
    return tape._push(y, "pow", (a, pn), lambda g: (g * pv * av ** (pv - 1.0), g * y * np.log(av)))


def abs(a):
    tape, (a,) = _lift(a)
    av = a.value
    return tape._push(np.abs(av), "abs", (a,), lambda g: (g * np.sign(av),))


def max(a, b):
    """Elementwise maximum; ties send the gradient to ``a``."""
    tape, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    pick = av >= bv
    return tape._push(
        np.where(pick, av, bv), "max", (a, b), lambda g: (np.where(pick, g, 0.0), np.where(pick, 0.0, g))
    )


def minimum(a, b):
    tape, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    pick = av <= bv
    return tape._push(
        np.where(pick, av, bv), "minimum", (a, b), lambda g: (np.where(pick, g, 0.0), np.where(pick, 0.0, g))
    )


def relu(a):
    return max(a, 0.0)


def softplus(a):
    tape, (a,) = _lift(a)
    av = a.value
    y = np.logaddexp(0.0, av)
    s = 0.5 * (1.0 + np.tanh(0.5 * av))
    return tape._push(y, "softplus", (a,), lambda g: (g * s,))


def sigmoid(a):
    tape, (a,) = _lift(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return tape._push(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def where(mask, a, b):
    """Select ``a`` where ``mask`` (a plain boolean array) else ``b``."""
    tape, (a, b) = _lift(a, b)
    mask = np.asarray(mask, dtype=bool)
    return tape._push(
        np.where(mask, a.value, b.value),
        "where",
        (a, b),
        lambda g: (np.where(mask, g, 0.0), np.where(mask, 0.0, g)),
    )


def stopgrad(a):
    """Forward identity; the backward sweep treats the result as a constant."""
    tape, (a,) = _lift(a)
    return tape._push(a.value.copy(), "stopgrad", (a,), None, stop=True)


# ---------------------------------------------------------------------------
# Reductions and vector ops
# ---------------------------------------------------------------------------


def sum(a, axis=None, keepdims=False):
    tape, (a,) = _lift(a)
    shape = a.value.shape
    y = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return tape._push(y, "sum", (a,), vjp)


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def dot(a, b):
    """Inner product over the last axis."""
    tape, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    y = np.sum(av * bv, axis=-1)
    return tape._push(y, "dot", (a, b), lambda g: (g[..., None] * bv, g[..., None] * av))


def normalize3(a):
    tape, (a,) = _lift(a)
    av = a.value
    norm = np.linalg.norm(av, axis=-1, keepdims=True)
    _check(norm > 0.0, "normalize3", "||x|| > 0", norm)
    y = av / norm

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return tape._push(y, "normalize3", (a,), vjp)


def softmax(a, axis=-1):
    tape, (a,) = _lift(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return tape._push(y, "softmax", (a,), vjp)


def matmul(a, b):
    tape, (a, b) = _lift(a, b)
    av, bv = a.value, b.value
    return tape._push(
        av @ bv,
        "matmul",
        (a, b),
        lambda g: (g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g),
    )


def take(a, idx):
    """Basic/advanced indexing ``a[idx]`` with scatter-add backward."""
    tape, (a,) = _lift(a)
    shape = a.value.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return tape._push(a.value[idx], "take", (a,), vjp)


def reshape(a, shape):
    tape, (a,) = _lift(a)
    old = a.value.shape
    return tape._push(a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def concat(xs, axis=-1):
    tape, xs = _lift(*xs)
    sizes = [x.value.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return tape._push(
        np.concatenate([x.value for x in xs], axis=axis),
        "concat",
        xs,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def trilinear(grid, points, lo, hi):
    """Trilinear lookup of a node grid (R0, R1, R2, C) at constant points (n, 3)."""
    tape, (grid,) = _lift(grid)
    points = np.asarray(points, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    shape = grid.value.shape
    y = kernels.trilinear(grid.value, points, lo, hi)
    return tape._push(
        y, "trilinear", (grid,), lambda g: (kernels.trilinear_scatter(g, points, shape, lo, hi),)
    )


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "pow": pow,
    "abs": abs,
    "dot": dot,
    "normalize3": normalize3,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "sum": sum,
    "mean": mean,
    "max": max,
    "minimum": minimum,
    "relu": relu,
    "where": where,
    "matmul": matmul,
    "take": take,
    "reshape": reshape,
    "trilinear": trilinear,
    "stopgrad": stopgrad,
}


# ---------------------------------------------------------------------------
# Optimizer and gradient checking
# ---------------------------------------------------------------------------


class AdamState:
    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0
        self.skipped = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on ``params``.

    ``lr`` is a float or a dict keyed like ``params``.  A non-finite gradient
    anywhere skips the whole update and returns ``False``.
    """
    for name, g in grads.items():
        if name not in params:
            continue
        if np.shape(g) != np.shape(params[name]):
            raise ValueError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            _log.warning("adam_step: non-finite gradient for %r, update skipped", name)
            return False
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        if name not in params:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        step = lr[name] if isinstance(lr, dict) else lr
        params[name] = params[name] - step * (m / c1) / (np.sqrt(v / c2) + eps)
    return True


def numerical_grad(fn, params, h=1e-5):
    """Central differences of a scalar ``fn(params)`` w.r.t. every parameter entry."""
    out = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        g = np.zeros_like(value)
        for i in np.ndindex(value.shape):
            plus = dict(params)
            minus = dict(params)
            vp = value.copy()
            vm = value.copy()
            vp[i] += h
            vm[i] -= h
            plus[name] = vp
            minus[name] = vm
            g[i] = (fn(plus) - fn(minus)) / (2.0 * h)
        out[name] = g
    return out


def value_and_grad(build, params):
    """Run ``build(tape, nodes)`` on fresh leaves and return (value, grads)."""
    tape = Tape()
    nodes = {k: tape.param(k, v) for k, v in params.items()}
    out = build(tape, nodes)
    return float(out.value), tape.backward(out)


def max_rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


LN2 = math.log(2.0)
