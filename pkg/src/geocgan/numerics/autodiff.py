"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Only the operations needed by small feed-forward networks and the training
losses are provided.  Nodes are appended to the tape in creation order, which
is already a topological order, so the backward sweep simply walks the tape
in reverse and visits every node once.

>>> tape = Tape()
>>> x = tape.var(3.0)
>>> float(tape.grad(x * x, [x])[0])
6.0
"""
import numpy as np

from ..errors import ContractError, ShapeError


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


class Var:
    __slots__ = ("value", "tape", "parents", "index")
    __array_priority__ = 1000

    def __init__(self, value, tape, parents=()):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.index = tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    # arithmetic -------------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Records primal operations; ``grad`` runs the reverse sweep."""

    def __init__(self):
        self.nodes = []

    def _register(self, var):
        self.nodes.append(var)
        return len(self.nodes) - 1

    def var(self, value):
        return Var(np.array(value, dtype=np.float64), self)

    def grad(self, output, inputs):
        if not isinstance(output, Var) or output.tape is not self:
            raise ContractError("output was not recorded on this tape")
        if output.value.size != 1:
            raise ContractError(f"gradient requires a scalar output, got shape {output.value.shape}")
        wanted = {v.index for v in inputs}
        adj = {output.index: np.ones_like(output.value)}
        for node in reversed(self.nodes[: output.index + 1]):
            if node.index in wanted or not node.parents:
                g = adj.get(node.index)  # kept for readout
            else:
                g = adj.pop(node.index, None)
            if g is None or not node.parents:
                continue
            for parent, vjp in node.parents:
                pg = vjp(g)
                if parent.index in adj:
                    adj[parent.index] = adj[parent.index] + pg
                else:
                    adj[parent.index] = pg
        out = []
        for v in inputs:
            if v.tape is not self:
                raise ContractError("input was not recorded on this tape")
            out.append(adj.get(v.index, np.zeros_like(v.value)))
        return out


def grad(tape, output, inputs):
    return tape.grad(output, inputs)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands live on different tapes")
    return tape


def _node(val, tape, parents):
    return Var(val, tape, tuple(p for p in parents if isinstance(p[0], Var)))


# elementwise binary ops ------------------------------------------------------
def add(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av + bv
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: _unbroadcast(g, av.shape)),
                             (b, lambda g: _unbroadcast(g, bv.shape))])


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av - bv
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: _unbroadcast(g, av.shape)),
                             (b, lambda g: -_unbroadcast(g, bv.shape))])


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av * bv
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: _unbroadcast(g * bv, av.shape)),
                             (b, lambda g: _unbroadcast(g * av, bv.shape))])


def div(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av / bv
    if tape is None:
        return out
    return _node(out, tape, [(a, lambda g: _unbroadcast(g / bv, av.shape)),
                             (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape))])


def power(a, p):
    av = value(a)
    out = av ** p
    if not isinstance(a, Var):
        return out
    return _node(out, a.tape, [(a, lambda g: g * p * av ** (p - 1))])


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"cannot multiply {av.shape} by {bv.shape}")
    out = av @ bv
    if tape is None:
        return out
    return _node(out, tape, [
        (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
        (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)),
    ])


# unary ops -------------------------------------------------------------------
def _unary(a, out, dfn):
    if not isinstance(a, Var):
        return out
    return _node(out, a.tape, [(a, dfn)])


def transpose(a):
    av = value(a)
    return _unary(a, np.swapaxes(av, -1, -2), lambda g: np.swapaxes(g, -1, -2))


def reshape(a, shape):
    av = value(a)
    return _unary(a, av.reshape(shape), lambda g: g.reshape(av.shape))


def getitem(a, idx):
    av = value(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _unary(a, av[idx], vjp)


def vsum(a, axis=None, keepdims=False):
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _unary(a, out, vjp)


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(vsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tanh(a):
    out = np.tanh(value(a))
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def exp(a):
    out = np.exp(value(a))
    return _unary(a, out, lambda g: g * out)


def log(a):
    av = value(a)
    return _unary(a, np.log(av), lambda g: g / av)


def sqrt(a):
    out = np.sqrt(value(a))
    return _unary(a, out, lambda g: g * 0.5 / out)


def abs(a):  # noqa: A001 - mirrors numpy naming
    av = value(a)
    # sign(0) == 0 fixes the subgradient at the kink
    return _unary(a, np.abs(av), lambda g: g * np.sign(av))


def softplus(a):
    av = value(a)
    out = np.logaddexp(0.0, av)
    return _unary(a, out, lambda g: g * _sigmoid(av))


def log_sigmoid(a):
    """``log(sigmoid(a))`` evaluated without overflow for large ``|a|``."""
    av = value(a)
    out = -np.logaddexp(0.0, -av)
    return _unary(a, out, lambda g: g * _sigmoid(-av))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def trace(a):
    av = value(a)
    out = np.trace(av, axis1=-2, axis2=-1)
    n = av.shape[-1]
    eye = np.eye(n)
    return _unary(a, out, lambda g: np.asarray(g)[..., None, None] * eye)


def norm(a, axis=-1):
    """Euclidean norm along ``axis`` whose gradient at the origin is zero."""
    av = value(a)
    out = np.sqrt(np.sum(av * av, axis=axis))

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return np.expand_dims(scale, axis) * av

    return _unary(a, out, vjp)


def stop_gradient(a):
    return np.array(value(a))


def concat(parts, axis=-1):
    tape = _tape_of(*parts)
    vals = [value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents = []
    for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(lo, hi)
        sl = tuple(sl)
        parents.append((p, lambda g, sl=sl: g[sl]))
    return _node(out, tape, parents)


def custom(inputs, out, vjps):
    """Record an op whose vector-Jacobian products are supplied by the caller."""
    tape = _tape_of(*inputs)
    if tape is None:
        return out
    return _node(out, tape, list(zip(inputs, vjps)))
