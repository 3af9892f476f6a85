"""Finite-difference gradient checks in float64.

Each case builds a scalar from some op's output (a fixed random projection),
differentiates it with :func:`ivgan.autograd.grad`, and compares against
central differences with step ``1e-5``. An entry passes when its absolute
error is at most ``atol`` or its relative error at most ``rtol``.
"""

from dataclasses import dataclass
import time
import warnings

import numpy as np

from . import apps
from . import autograd as A
from . import layers as L
from . import wgan

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel: float
    max_abs: float
    passed: bool
    seconds: float

    def line(self):
        flag = "ok  " if self.passed else "FAIL"
        return f"{flag} {self.name:<40s} rel {self.max_rel:.2e} abs {self.max_abs:.2e} ({self.seconds:.2f}s)"


def numeric_grad(f, arrays, i, h=STEP):
    """Central differences of scalar ``f(arrays)`` with respect to ``arrays[i]``."""
    x = arrays[i]
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + h
        fp = f(arrays)
        flat[j] = old - h
        fm = f(arrays)
        flat[j] = old
        gflat[j] = (fp - fm) / (2 * h)
    return out


def compare(analytic, numeric, rtol=RTOL, atol=ATOL):
    """(max relative error over entries failing atol, max abs error, passed)."""
    analytic, numeric = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(err <= atol, 0.0, err / np.maximum(scale, 1e-300))
    max_rel = float(rel.max()) if rel.size else 0.0
    max_abs = float(err.max()) if err.size else 0.0
    return max_rel, max_abs, max_rel <= rtol


def check(name, fn, inputs, rtol=RTOL, atol=ATOL):
    """Compare autograd and finite differences for scalar ``fn(*vars)``.

    ``inputs`` are float64 arrays; every one is differentiated.
    """
    t0 = time.perf_counter()
    arrays = [np.array(a, np.float64) for a in inputs]
    vs = [A.Var(a, requires_grad=True) for a in arrays]
    out = fn(*vs)
    with warnings.catch_warnings():
        # e.g. the output bias does not reach a gradient penalty
        warnings.simplefilter("ignore", A.UnreachableGradWarning)
        grads = A.grad(out, vs)

    def f(arrs):
        with A.no_grad():
            return float(fn(*[A.Var(a) for a in arrs]).value)

    worst_rel, worst_abs, ok = 0.0, 0.0, True
    for i, g in enumerate(grads):
        r, a, p = compare(g.value, numeric_grad(f, arrays, i), rtol, atol)
        worst_rel, worst_abs, ok = max(worst_rel, r), max(worst_abs, a), ok and p
    return CheckResult(name, worst_rel, worst_abs, ok, time.perf_counter() - t0)


def projected(op, shape_seed=0):
    """Wrap an op so its output is reduced to a scalar by a fixed random projection."""
    cache = {}

    def fn(*vs):
        out = op(*vs)
        if out.shape not in cache:
            r = np.random.default_rng(shape_seed).standard_normal(out.shape)
            cache[out.shape] = r
        return A.sum_(A.mul(out, A.as_var(cache[out.shape], out)))
    return fn


# ---------------------------------------------------------------------------
# tiny critics for the penalty path

def dense_critic(x, w1, b1, w2, b2, act="tanh"):
    """x (N, d) -> (N,): act(x W1 + b1) w2 + b2."""
    n = x.shape[0]
    h = A.add(A.matmul(x, w1), A.broadcast_to(b1, (n, w1.shape[1])))
    h = A.tanh(h) if act == "tanh" else A.leaky_relu(h, L.LEAKY_SLOPE)
    out = A.add(A.matmul(h, w2), A.broadcast_to(b2, (n, 1)))
    return A.reshape(out, (n,))


def dense_critic_params(d=4, hidden=6, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((d, hidden)) * 0.7, rng.standard_normal(hidden) * 0.3,
            rng.standard_normal((hidden, 1)) * 0.7, rng.standard_normal(1) * 0.3]


def penalty_case(act, seed=0, batch=3, d=4, hidden=6):
    """Scalar function of the critic params: the gradient penalty at fixed x-hat."""
    rng = np.random.default_rng(seed + 100)
    xhat = rng.standard_normal((batch, d))

    def fn(w1, b1, w2, b2):
        critic = lambda x: dense_critic(x, w1, b1, w2, b2, act)
        return wgan.gradient_penalty(critic, A.Var(xhat, requires_grad=True))

    return fn, dense_critic_params(d, hidden, seed)


def _conv_critic_case(seed=0):
    rng = np.random.default_rng(seed)
    xhat = rng.standard_normal((2, 2, 4, 4, 1))
    w = rng.standard_normal((2, 2, 2, 1, 2)) * 0.5
    head = rng.standard_normal((1 * 2 * 2 * 2, 1)) * 0.5

    def fn(w, head):
        def critic(x):
            h = A.tanh(A.conv3d(x, w, 2, 0))
            return A.reshape(A.matmul(A.reshape(h, (x.shape[0], 8)), head), (x.shape[0],))
        return wgan.gradient_penalty(critic, A.Var(xhat, requires_grad=True))
    return fn, [w, head]


# ---------------------------------------------------------------------------
# the suite

def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def cases(seed=0):
    """Yield ``(name, fn, inputs, rtol)`` for every differentiable op."""
    rng = np.random.default_rng(seed)
    s = lambda *shape: rng.standard_normal(shape)
    P = projected
    # small shapes drawn per seed
    d0, d1, d2 = (int(v) for v in rng.integers(2, 6, 3))
    e = int(rng.integers(0, 2))

    yield "add", P(A.add), [s(d0, d1), s(d0, d1)], RTOL
    yield "add scalar", P(A.add), [s(d0, d1), s()], RTOL
    yield "sub", P(A.sub), [s(d0, d1), s(d0, d1)], RTOL
    yield "mul", P(A.mul), [s(d0, d1), s(d0, d1)], RTOL
    yield "mul scalar", P(A.mul), [s(d0, d1), s()], RTOL
    yield "div", P(A.div), [s(d0, d1), _away_from_zero(rng, (d0, d1))], RTOL
    yield "neg", P(A.neg), [s(d2)], RTOL
    yield "square", P(A.square), [s(d2)], RTOL
    yield "sqrt", P(A.sqrt), [rng.uniform(0.3, 2.0, 6)], RTOL
    yield "tanh", P(A.tanh), [s(d0, d2)], RTOL
    yield "relu", P(A.relu), [_away_from_zero(rng, (d0, d2))], RTOL
    yield "leaky_relu", P(A.leaky_relu), [_away_from_zero(rng, (d0, d2))], RTOL
    yield "rsqrt", P(L.rsqrt), [rng.uniform(0.3, 2.0, 6)], RTOL
    yield "sum axis", P(lambda a: A.sum_(a, 1)), [s(d0, d1, d2)], RTOL
    yield "mean axes", P(lambda a: A.mean(a, (0, 2), keepdims=True)), [s(d0, d1, d2)], RTOL
    yield "max axis", P(lambda a: A.max_(a, 1)), [rng.permutation(24).reshape(3, 8) * 0.1], RTOL
    yield "reshape", P(lambda a: A.reshape(a, (4, 6))), [s(2, 3, 4)], RTOL
    yield "transpose", P(lambda a: A.transpose(a, (2, 0, 1))), [s(d0, d1, d2)], RTOL
    yield "broadcast_to", P(lambda a: A.broadcast_to(a, (d0, d2))), [s(d2)], RTOL
    yield "slice", P(lambda a: a[1:3, :, 2:]), [s(4, 3, 5)], RTOL
    yield "pad", P(lambda a: A.pad(a, ((1, 0), (2, 1)))), [s(3, 2)], RTOL
    yield "concat", P(lambda a, b: A.concat([a, b], 1)), [s(2, 3), s(2, 2)], RTOL
    yield "matmul", P(A.matmul), [s(d0, d0), s(d0, d0)], RTOL
    yield "matmul rect", P(A.matmul), [s(d0, d2), s(d2, d1)], RTOL
    yield "per_sample_norm", P(A.per_sample_norm), [s(d0, d1, d2)], RTOL
    yield "where_const", P(lambda a: A.where_const(np.arange(6).reshape(2, 3) % 2 == 0, a, 0.5)), [s(2, 3)], RTOL

    convs = [
        ((1, 4, 4 + 2 * e, 4, 2), (4, 4, 4, 2, 2), 2, 1),
        ((2, 3 + e, 5, 4, 1), (3, 3, 2, 1, 3), (1, 2, 2), (1, 1, 0)),
        ((1, 2, 3, 3 + e, 3), (1, 2, 2, 3, 2), 1, 0),
    ]
    for xs, ws, st, pd in convs:
        tag = f"{xs[1:4]} k{ws[:3]}"
        yield f"conv3d {tag}", P(lambda x, w, st=st, pd=pd: A.conv3d(x, w, st, pd)), [s(*xs), s(*ws)], RTOL
        with A.no_grad():
            ys = A.conv3d(A.Var(np.zeros(xs)), A.Var(np.zeros(ws)), st, pd).shape
        yield (f"conv3d_transposed {tag}",
               P(lambda y, w, st=st, pd=pd, xs=xs: A.conv3d_transposed(y, w, st, pd, xs[1:4])),
               [s(*ys), s(*ws)], RTOL)
        yield (f"conv3d_weight_grad {tag}",
               P(lambda x, dy, st=st, pd=pd, ws=ws: A.conv3d_weight_grad(x, dy, ws[:3], st, pd)),
               [s(*xs), s(*ys)], RTOL)

    spec = L.ConvSpec(2, 3, transposed=True)
    yield "layer conv3d_transposed + bias", P(lambda x, w, b: L.conv3d(x, spec, w, b)), \
        [s(2, 1, 2, 2, 2), s(*spec.weight_shape), s(3)], RTOL
    yield "linear", P(L.linear), [s(3, 4), s(4, 2), s(2)], RTOL
    yield "layer_norm", P(L.layer_norm), [s(3, 2, 2, 2, 2), s(2), s(2)], RTOL
    yield "batch_norm (training)", P(lambda x, g, b: L.batch_norm(x, g, b)), [s(3, 2, 2, 1, 2), s(2), s(2)], RTOL
    stats = L.BatchNormStats(2, dtype=np.float64)
    stats.mean, stats.var = s(2), rng.uniform(0.5, 2.0, 2)
    yield "batch_norm (inference)", P(lambda x, g, b: L.batch_norm(x, g, b, stats, training=False)), \
        [s(2, 2, 2, 1, 2), s(2), s(2)], RTOL
    yield "grayscale", P(apps.gray_var), [s(2, 3, 2, 3)], RTOL
    yield "l2_loss", apps.l2_loss, [s(2, 3, 4), s(2, 3, 4)], RTOL

    fn, params = penalty_case("tanh", seed)
    yield "gradient_penalty dense tanh (2nd order)", fn, params, 1e-3
    fn, params = penalty_case("leaky", seed + 1)
    yield "gradient_penalty dense leaky (2nd order)", fn, params, 1e-3
    fn, params = _conv_critic_case(seed)
    yield "gradient_penalty conv (2nd order)", fn, params, 1e-3


def run_suite(seed=0, report=None):
    """Run every case; returns the list of :class:`CheckResult`."""
    results = []
    for name, fn, inputs, rtol in cases(seed):
        res = check(name, fn, inputs, rtol=rtol)
        results.append(res)
        if report is not None:
            report(res)
    return results
