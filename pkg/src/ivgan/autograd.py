"""Reverse-mode automatic differentiation with higher-order support.

Every backward rule is written in terms of the same differentiable ops it
differentiates, so a gradient computed with ``create_graph=True`` is itself
an ordinary :class:`Var` on the graph and can be differentiated again. This
is what the gradient penalty needs.

Nodes carry a sequence id drawn from their :class:`Tape`; ids increase in
creation order, which is therefore a valid topological order of the DAG.
"""

import contextlib
import itertools
import math
import threading
import warnings

import numpy as np

from . import tensor as T


class Tape:
    """Id source for graph nodes. Operands of one op must share a tape."""

    def __init__(self, name="tape"):
        self.name = name
        self._ids = itertools.count()

    def next_id(self):
        return next(self._ids)

    def __repr__(self):
        return f"Tape({self.name!r})"


_state = threading.local()


def _tls():
    if not hasattr(_state, "enabled"):
        _state.enabled = True
        _state.tape = Tape("default")
    return _state


def default_tape():
    return _tls().tape


def is_grad_enabled():
    return _tls().enabled


@contextlib.contextmanager
def set_grad_enabled(flag):
    st = _tls()
    prev, st.enabled = st.enabled, bool(flag)
    try:
        yield
    finally:
        st.enabled = prev


def no_grad():
    return set_grad_enabled(False)


@contextlib.contextmanager
def using_tape(tape):
    st = _tls()
    prev, st.tape = st.tape, tape
    try:
        yield tape
    finally:
        st.tape = prev


class TapeMismatch(RuntimeError):
    pass


class UnreachableGradWarning(UserWarning):
    pass


class Var:
    """A value on the computation graph."""

    __slots__ = ("value", "requires_grad", "parents", "backward", "id", "tape", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, name=None, tape=None):
        self.value = np.asarray(value)
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward = None
        self.tape = tape or default_tape()
        self.id = self.tape.next_id()
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def numpy(self):
        return self.value

    def detach(self):
        return Var(self.value, tape=self.tape)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axes=None, keepdims=False):
        return sum_(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return mean(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = shape[0]
        return reshape(self, shape)


def as_var(x, like=None):
    if isinstance(x, Var):
        return x
    v = np.asarray(x)
    if isinstance(like, Var):
        if v.dtype != like.dtype:
            v = v.astype(like.dtype)
        return Var(v, tape=like.tape)
    return Var(v)


def _node(value, parents, backward):
    """Create an op result; record the edge only if some parent needs grads."""
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise TapeMismatch(f"operands live on different tapes: {tape!r} and {p.tape!r}")
    out = Var(value, tape=tape)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward = backward
    return out


# ---------------------------------------------------------------------------
# gradient driver

def grad(output, wrt, create_graph=False, seed_grad=None):
    """Gradients of scalar ``output`` with respect to each Var in ``wrt``.

    With ``create_graph`` the returned Vars are differentiable. A ``wrt``
    entry that does not influence ``output`` gets a zero gradient and an
    :class:`UnreachableGradWarning`.
    """
    single = isinstance(wrt, Var)
    if single:
        wrt = [wrt]
    if seed_grad is None and output.value.size != 1:
        raise ValueError(f"grad needs a scalar output, got shape {output.shape}")

    # collect reachable nodes
    nodes, stack, seen = [], [output], set()
    while stack:
        v = stack.pop()
        if id(v) in seen or not v.requires_grad:
            continue
        seen.add(id(v))
        nodes.append(v)
        stack.extend(v.parents)
    nodes.sort(key=lambda v: v.id)

    targets = {id(v) for v in wrt}
    needed = set()
    for v in nodes:  # ascending: parents before children
        if id(v) in targets or any(id(p) in needed for p in v.parents):
            needed.add(id(v))

    grads = {}
    with set_grad_enabled(create_graph):
        if seed_grad is None:
            seed_grad = Var(np.ones_like(output.value), tape=output.tape)
        grads[id(output)] = as_var(seed_grad, output)
        for v in reversed(nodes):
            g = grads.get(id(v))
            if g is None or not v.parents or id(v) not in needed:
                continue
            if id(v) not in targets:
                del grads[id(v)]  # interior node; free memory early
            mask = tuple(id(p) in needed for p in v.parents)
            pgrads = v.backward(g, mask)
            for p, pg, m in zip(v.parents, pgrads, mask):
                if not m or pg is None:
                    continue
                if pg.shape != p.shape:
                    raise AssertionError(f"backward produced {pg.shape} for parent {p.shape}")
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)

    out = []
    for v in wrt:
        g = grads.get(id(v))
        if g is None:
            if id(v) not in needed or not v.requires_grad:
                warnings.warn(f"{v!r} is not reachable from the output; gradient is zero",
                              UnreachableGradWarning, stacklevel=2)
            g = Var(np.zeros_like(v.value), tape=v.tape)
        out.append(g)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# elementwise ops

def _scalar(x):
    return not isinstance(x, Var) and np.ndim(x) == 0


def _pair(a, b, what):
    """Coerce operands to Vars of one shape; a 0-d Var is broadcast explicitly."""
    a, b = as_var(a, b), as_var(b, a)
    if a.shape != b.shape:
        if b.ndim == 0:
            b = broadcast_to(b, a.shape)
        elif a.ndim == 0:
            a = broadcast_to(a, b.shape)
        else:
            raise T.ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def add(a, b):
    if _scalar(b):
        a = as_var(a)
        c = a.value.dtype.type(b)
        return _node(a.value + c, (a,), lambda g, m: (g,))
    if _scalar(a):
        return add(b, a)
    a, b = _pair(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g, m: (g, g))


def neg(a):
    return _node(-a.value, (a,), lambda g, m: (neg(g),))


def sub(a, b):
    if _scalar(b):
        return add(a, -b)
    if _scalar(a):
        return add(neg(b), a)
    a, b = _pair(a, b, "sub")
    return _node(a.value - b.value, (a, b), lambda g, m: (g, neg(g) if m[1] else None))


def mul(a, b):
    if _scalar(b):
        a = as_var(a)
        c = a.value.dtype.type(b)
        return _node(a.value * c, (a,), lambda g, m: (mul(g, float(c)),))
    if _scalar(a):
        return mul(b, a)
    a, b = _pair(a, b, "mul")
    return _node(a.value * b.value, (a, b),
                 lambda g, m: (mul(g, b) if m[0] else None, mul(g, a) if m[1] else None))


def div(a, b):
    if _scalar(b):
        if T.STRICT and b == 0:
            raise ZeroDivisionError("division by zero")
        return mul(a, 1.0 / b)
    if _scalar(a):
        a = Var(np.full(b.shape, a, dtype=b.dtype), tape=b.tape)
    a, b = _pair(a, b, "div")
    if T.STRICT and np.any(b.value == 0):
        raise ZeroDivisionError("division by zero")

    def back(g, m):
        ga = div(g, b) if m[0] else None
        gb = neg(div(mul(g, div(a, b)), b)) if m[1] else None
        return ga, gb

    return _node(a.value / b.value, (a, b), back)


def square(a):
    return _node(np.square(a.value), (a,), lambda g, m: (mul(g, mul(a, 2.0)),))


def sqrt(a):
    out = _node(np.sqrt(a.value), (a,), None)
    if out.parents:
        out.backward = lambda g, m: (div(g, mul(out, 2.0)),)
    return out


def tanh(a):
    out = _node(np.tanh(a.value), (a,), None)
    if out.parents:
        out.backward = lambda g, m: (mul(g, rsub1(square(out))),)
    return out


def rsub1(a):
    """1 - a"""
    return add(neg(a), 1.0)


def mask_mul(a, mask):
    """Multiply by a constant (non-differentiable) array of the same shape."""
    mask = np.asarray(mask, dtype=a.dtype)
    return _node(a.value * mask, (a,), lambda g, m: (mask_mul(g, mask),))


def relu(a):
    # subgradient at 0 is 0 (the negative-side slope)
    mask = a.value > 0
    return mask_mul(a, mask)


def leaky_relu(a, slope=0.2):
    # subgradient at 0 is the negative-side slope
    mask = np.where(a.value > 0, 1.0, slope).astype(a.dtype)
    return mask_mul(a, mask)


def where_const(cond, a, fill=0.0):
    """``a`` where cond else a constant; cond is a fixed boolean array."""
    out = mask_mul(a, cond)
    if fill != 0.0:
        out = add(out, as_var(np.where(cond, 0.0, fill).astype(a.dtype), a))
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops

def _axes(a, axes):
    return T._norm_axes(a.value, axes)


def sum_(a, axes=None, keepdims=False):
    axes = _axes(a, axes)
    shape = a.shape

    def back(g, m):
        if not keepdims:
            kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))
            g = reshape(g, kshape)
        return (broadcast_to(g, shape),)

    return _node(a.value.sum(axis=axes, keepdims=keepdims), (a,), back)


def mean(a, axes=None, keepdims=False):
    axes = _axes(a, axes)
    n = math.prod(a.shape[i] for i in axes)
    return mul(sum_(a, axes, keepdims), 1.0 / n)


def max_(a, axes=None, keepdims=False):
    axes = _axes(a, axes)
    val = a.value.max(axis=axes, keepdims=True)
    hit = (a.value == val)
    share = (hit / hit.sum(axis=axes, keepdims=True)).astype(a.dtype)  # ties split evenly
    out_val = val if keepdims else val.reshape([n for i, n in enumerate(a.shape) if i not in axes])
    kshape = val.shape

    def back(g, m):
        return (mask_mul(broadcast_to(reshape(g, kshape), a.shape), share),)

    return _node(out_val, (a,), back)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    old = a.shape
    return _node(T.reshape(a.value, shape), (a,), lambda g, m: (reshape(g, old),))


def transpose(a, perm):
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))
    return _node(np.transpose(a.value, perm), (a,), lambda g, m: (transpose(g, inv),))


def broadcast_to(a, shape):
    """Explicit broadcast; the only place implicit numpy broadcasting is allowed."""
    shape = tuple(shape)
    src = a.shape
    if src == shape:
        return a
    lead = len(shape) - len(src)
    if lead < 0:
        raise T.ShapeError(f"cannot broadcast {src} to {shape}")
    axes = tuple(range(lead)) + tuple(lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1)

    def back(g, m):
        r = sum_(g, axes, keepdims=True)
        return (reshape(r, src),)

    return _node(np.broadcast_to(a.value, shape), (a,), back)


def slice_(a, index):
    if not isinstance(index, tuple):
        index = (index,)
    index = index + (slice(None),) * (a.ndim - len(index))
    val = T.slice_(a.value, index)
    # the backward is a zero-pad, itself differentiable
    widths, kshape = [], []
    for s, n in zip(index, a.shape):
        if isinstance(s, slice):
            lo = 0 if s.start is None else s.start
            hi = n if s.stop is None else s.stop
        else:
            lo = s % n
            hi = lo + 1
        widths.append((lo, n - hi))
        kshape.append(hi - lo)
    kshape = tuple(kshape)

    def back(g, m):
        if g.shape != kshape:
            g = reshape(g, kshape)
        return (pad(g, widths),)

    return _node(np.ascontiguousarray(val), (a,), back)


def pad(a, widths):
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    index = tuple(slice(lo, lo + n) for (lo, hi), n in zip(widths, a.shape))
    return _node(T.pad(a.value, widths), (a,), lambda g, m: (slice_(g, index),))


def concat(vs, axis=0):
    vs = list(vs)
    val = np.concatenate([v.value for v in vs], axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vs])

    def back(g, m):
        out = []
        for i, keep in enumerate(m):
            if not keep:
                out.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(slice_(g, tuple(idx)))
        return tuple(out)

    return _node(val, tuple(vs), back)


# ---------------------------------------------------------------------------
# linear algebra and convolution

def matmul(a, b):
    a, b = as_var(a, b), as_var(b, a)

    def back(g, m):
        ga = matmul(g, transpose(b, (1, 0))) if m[0] else None
        gb = matmul(transpose(a, (1, 0)), g) if m[1] else None
        return ga, gb

    return _node(T.matmul(a.value, b.value), (a, b), back)


def conv3d(x, w, stride=2, padding=1):
    stride, padding = T._triple(stride), T._triple(padding)
    in_shape = x.shape[1:4]

    def back(g, m):
        gx = conv3d_transposed(g, w, stride, padding, in_shape) if m[0] else None
        gw = conv3d_weight_grad(x, g, w.shape[:3], stride, padding) if m[1] else None
        return gx, gw

    return _node(T.conv3d(x.value, w.value, stride, padding), (x, w), back)


def conv3d_transposed(y, w, stride=2, padding=1, out_shape=None):
    stride, padding = T._triple(stride), T._triple(padding)
    val = T.conv3d_transposed(y.value, w.value, stride, padding, out_shape)

    def back(g, m):
        gy = conv3d(g, w, stride, padding) if m[0] else None
        gw = conv3d_weight_grad(g, y, w.shape[:3], stride, padding) if m[1] else None
        return gy, gw

    return _node(val, (y, w), back)


def conv3d_weight_grad(x, dy, kernel, stride=2, padding=1):
    kernel, stride, padding = T._triple(kernel), T._triple(stride), T._triple(padding)
    in_shape = x.shape[1:4]

    def back(g, m):
        gx = conv3d_transposed(dy, g, stride, padding, in_shape) if m[0] else None
        gdy = conv3d(x, g, stride, padding) if m[1] else None
        return gx, gdy

    return _node(T.conv3d_weight_grad(x.value, dy.value, kernel, stride, padding), (x, dy), back)


# ---------------------------------------------------------------------------
# norms

def per_sample_norm(v):
    """L2 norm of each sample's flattened entries: (N, ...) -> (N,).

    The backward at a zero norm is 0 rather than NaN.
    """
    axes = tuple(range(1, v.ndim))
    nv = np.sqrt(np.square(v.value).sum(axis=axes))
    zero = nv == 0
    kshape = (v.shape[0],) + (1,) * (v.ndim - 1)

    def back(g, m):
        # d|v_i| = v_i / |v_i|; rebuilt from v so it stays differentiable
        n = sqrt(sum_(square(v), axes))
        n = add(n, as_var(zero.astype(v.dtype), n))
        scale = mask_mul(div(g, n), ~zero)
        return (mul(v, broadcast_to(reshape(scale, kshape), v.shape)),)

    return _node(nv, (v,), back)
