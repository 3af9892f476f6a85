"""Network layers and the Adam optimizer, on top of :mod:`ivgan.autograd`."""

from collections import OrderedDict
from dataclasses import dataclass, field
import math

import numpy as np

from . import autograd as A
from . import tensor as T

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5
ADAM_EPS = 1e-8
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (4, 4, 4)
    stride: tuple = (2, 2, 2)
    padding: tuple = (1, 1, 1)
    transposed: bool = False
    bias: bool = True

    def __post_init__(self):
        for name in ("kernel", "stride", "padding"):
            object.__setattr__(self, name, T._triple(getattr(self, name)))

    @property
    def weight_shape(self):
        # weights are always stored in the direction of the forward conv,
        # (kt, kh, kw, C_small_side_in, C_out); for a transposed layer the
        # conv it is the adjoint of maps out_channels -> in_channels.
        if self.transposed:
            return self.kernel + (self.out_channels, self.in_channels)
        return self.kernel + (self.in_channels, self.out_channels)

    @property
    def fan_in(self):
        return math.prod(self.kernel) * self.in_channels

    def out_extents(self, extents):
        if self.transposed:
            return tuple(T.conv_transposed_extent(n, k, s, p)
                         for n, k, s, p in zip(extents, self.kernel, self.stride, self.padding))
        return tuple(T.conv_out_extent(n, k, s, p)
                     for n, k, s, p in zip(extents, self.kernel, self.stride, self.padding))


class ParamSet(OrderedDict):
    """Named trainable Vars. Values are replaced, never mutated in place."""

    def add(self, name, value):
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        self[name] = A.Var(value, requires_grad=True, name=name)
        return self[name]

    def arrays(self):
        return OrderedDict((k, v.value) for k, v in self.items())

    def load_arrays(self, arrays):
        for k, v in self.items():
            a = np.asarray(arrays[k])
            if a.shape != v.shape:
                raise ValueError(f"parameter {k}: expected shape {v.shape}, got {a.shape}")
            v.value = a.astype(v.dtype)

    def astype(self, dtype):
        for v in self.values():
            v.value = v.value.astype(dtype)
        return self

    def count(self):
        return sum(v.value.size for v in self.values())


# ---------------------------------------------------------------------------
# initialization

def he_init(shape, fan_in, seed, dtype=np.float32):
    """Normal(0, sqrt(2 / fan_in)) weights."""
    std = math.sqrt(2.0 / fan_in)
    return (T.rng_fill("normal", shape, seed, dtype=np.float64) * std).astype(dtype)


# ---------------------------------------------------------------------------
# layers

def conv3d(x, spec, w, b=None):
    if x.shape[-1] != spec.in_channels:
        raise T.ShapeError(f"conv input has {x.shape[-1]} channels, layer expects {spec.in_channels}")
    if spec.transposed:
        out_shape = spec.out_extents(x.shape[1:4])
        y = A.conv3d_transposed(x, w, spec.stride, spec.padding, out_shape)
    else:
        y = A.conv3d(x, w, spec.stride, spec.padding)
    if b is not None:
        y = A.add(y, A.broadcast_to(b, y.shape))
    return y


def conv3d_transposed(x, spec, w, b=None):
    if not spec.transposed:
        spec = ConvSpec(spec.in_channels, spec.out_channels, spec.kernel, spec.stride,
                        spec.padding, True, spec.bias)
    return conv3d(x, spec, w, b)


def linear(x, w, b=None):
    y = A.matmul(x, w)
    if b is not None:
        y = A.add(y, A.broadcast_to(b, y.shape))
    return y


def rsqrt(a):
    out = A._node(1.0 / np.sqrt(a.value), (a,), None)
    if out.parents:
        out.backward = lambda g, m: (A.mul(g, A.mul(A.mul(A.square(out), out), -0.5)),)
    return out


def _normalize(x, axes, eps):
    mu = A.mean(x, axes, keepdims=True)
    xc = A.sub(x, A.broadcast_to(mu, x.shape))
    var = A.mean(A.square(xc), axes, keepdims=True)
    inv = rsqrt(A.add(var, eps))
    return A.mul(xc, A.broadcast_to(inv, x.shape)), mu, var


def _affine(y, gamma, beta):
    if gamma is not None:
        y = A.mul(y, A.broadcast_to(gamma, y.shape))
    if beta is not None:
        y = A.add(y, A.broadcast_to(beta, y.shape))
    return y


def layer_norm(x, gamma=None, beta=None, eps=NORM_EPS):
    """Per-sample normalization over every non-batch axis.

    ``gamma``/``beta`` are per channel (last axis). Sample ``i`` of the
    output depends on sample ``i`` of the input only.
    """
    axes = tuple(range(1, x.ndim))
    y, _, _ = _normalize(x, axes, eps)
    return _affine(y, gamma, beta)


class BatchNormStats:
    """Running mean/variance for one batch-norm layer."""

    def __init__(self, channels, momentum=BN_MOMENTUM, dtype=np.float32):
        self.momentum = momentum
        self.mean = np.zeros(channels, dtype)
        self.var = np.ones(channels, dtype)

    def update(self, mean, var, count):
        m = self.momentum
        unbiased = var * (count / max(count - 1, 1))
        self.mean = (m * self.mean + (1 - m) * mean).astype(self.mean.dtype)
        self.var = (m * self.var + (1 - m) * unbiased).astype(self.var.dtype)


def batch_norm(x, gamma=None, beta=None, stats=None, training=True, eps=NORM_EPS):
    """Per-channel normalization over batch and all spatio-temporal axes.

    In training mode batch statistics are used (and folded into ``stats`` if
    given); in inference mode the running statistics in ``stats``.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2")
        y, mu, var = _normalize(x, axes, eps)
        if stats is not None:
            count = math.prod(x.shape[i] for i in axes)
            stats.update(mu.value.reshape(-1), var.value.reshape(-1), count)
    else:
        if stats is None:
            raise ValueError("inference-mode batch_norm needs running statistics")
        shift = (-stats.mean).astype(x.dtype)
        scale = (1.0 / np.sqrt(stats.var + eps)).astype(x.dtype)
        y = A.mul(A.add(x, A.broadcast_to(A.as_var(shift, x), x.shape)),
                  A.broadcast_to(A.as_var(scale, x), x.shape))
    return _affine(y, gamma, beta)


relu = A.relu
tanh = A.tanh


def leaky_relu(x, slope=LEAKY_SLOPE):
    return A.leaky_relu(x, slope)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.99
    eps: float = ADAM_EPS
    t: int = 0
    m: dict = field(default_factory=OrderedDict)
    v: dict = field(default_factory=OrderedDict)


def adam_step(params, grads, state):
    """One Adam update with bias correction; replaces each param's value.

    ``grads`` maps parameter names to arrays. Raises ``FloatingPointError``
    on a non-finite gradient before touching anything.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=p.dtype)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            v = state.v[name] = np.zeros_like(p.value)
        # moments are private to the optimizer, so update them in place
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        step = np.sqrt(v / c2)
        step += state.eps
        np.divide(m, step, out=step)
        step *= state.alpha / c1
        p.value = p.value - step
    return params, state
