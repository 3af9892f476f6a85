"""Dense tensor kernels.

Tensors are plain ``numpy.ndarray`` objects laid out row-major. Video batches
use the ``(N, T, H, W, C)`` layout throughout. Nothing in here records
gradients; the differentiable wrappers live in :mod:`ivgan.autograd`.

Random numbers come from the PCG64 bit generator. Only its raw 64-bit stream
is used (stable across numpy versions and platforms); uniforms take the top
53 bits and normals use the Box-Muller transform, so a given
``(dist, shape, seed)`` always yields the same bits.
"""

import math

import numpy as np

F32 = np.float32
F64 = np.float64

STRICT = True  # raise on division by zero


class ShapeError(ValueError):
    pass


def _check_same(a, b, what):
    if np.ndim(b) == 0:
        return
    if a.shape != np.shape(b):
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(np.shape(b))}")


# ---------------------------------------------------------------------------
# elementwise / matmul / reduce

def leaky_relu(a, slope=0.2):
    return np.where(a > 0, a, a * a.dtype.type(slope))


_UNARY = {
    "neg": np.negative,
    "tanh": np.tanh,
    "relu": lambda a: np.maximum(a, 0),
    "leaky_relu": leaky_relu,
    "sqrt": np.sqrt,
    "square": np.square,
}

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def elementwise(op, a, b=None, **kw):
    """Apply a pointwise op. Binary ops need equal shapes or a scalar ``b``."""
    a = np.asarray(a)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} is unary")
        return _UNARY[op](a, **kw)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if b is None:
        raise TypeError(f"{op} needs two operands")
    b = b if np.ndim(b) == 0 else np.asarray(b)
    _check_same(a, b, op)
    if op == "div" and STRICT and np.any(np.asarray(b) == 0):
        raise ZeroDivisionError("division by zero in elementwise div")
    return _BINARY[op](a, b)


def matmul(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner mismatch {a.shape} @ {b.shape}")
    return a @ b


def _norm_axes(a, axes):
    if axes is None:
        return tuple(range(a.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise ValueError(f"invalid axis {ax} for shape {a.shape}")
        out.append(ax % a.ndim)
    return tuple(sorted(set(out)))


def reduce(op, a, axes=None, keepdims=False):
    a = np.asarray(a)
    axes = _norm_axes(a, axes)
    if op == "sum":
        return a.sum(axis=axes, keepdims=keepdims)
    if op == "mean":
        return a.mean(axis=axes, keepdims=keepdims)
    if op == "max":
        return a.max(axis=axes, keepdims=keepdims)
    raise ValueError(f"unknown reduction {op!r}")


# ---------------------------------------------------------------------------
# structural ops

def reshape(a, shape):
    a = np.asarray(a)
    shape = tuple(shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} ({a.size} elements) to {shape}")
    return a.reshape(shape)


def transpose(a, perm=None):
    return np.transpose(a, perm)


def slice_(a, index):
    """Basic slicing; ``index`` is a tuple of ``slice`` objects or ints.

    Unlike numpy, out-of-range bounds raise instead of truncating.
    """
    a = np.asarray(a)
    if not isinstance(index, tuple):
        index = (index,)
    if len(index) > a.ndim:
        raise IndexError(f"too many indices for shape {a.shape}")
    for ax, s in enumerate(index):
        n = a.shape[ax]
        if isinstance(s, slice):
            if s.step not in (None, 1):
                raise ValueError("only unit-step slices are supported")
            lo = 0 if s.start is None else s.start
            hi = n if s.stop is None else s.stop
            if not 0 <= lo <= hi <= n:
                raise IndexError(f"slice {lo}:{hi} out of bounds for axis {ax} of extent {n}")
        elif not -n <= s < n:
            raise IndexError(f"index {s} out of bounds for axis {ax} of extent {n}")
    return a[index]


def pad(a, widths, value=0.0):
    """Constant-pad; ``widths`` is one ``(before, after)`` pair per axis.

    Always returns a new array. Much cheaper than ``np.pad`` for the small
    5-d blocks the convolutions pad thousands of times per step.
    """
    a = np.asarray(a)
    widths = [(int(lo), int(hi)) for lo, hi in widths]
    if len(widths) != a.ndim or any(lo < 0 or hi < 0 for lo, hi in widths):
        raise ShapeError(f"pad widths {widths} do not fit an array of shape {a.shape}")
    out = np.full([n + lo + hi for n, (lo, hi) in zip(a.shape, widths)], value, dtype=a.dtype)
    out[tuple(slice(lo, lo + n) for n, (lo, _) in zip(a.shape, widths))] = a
    return out


# ---------------------------------------------------------------------------
# random numbers

def _raw(seed, n):
    bits = np.random.PCG64(seed)
    return bits.random_raw(n)


def _uniform01(seed, n):
    return (_raw(seed, n) >> np.uint64(11)).astype(F64) * (1.0 / 9007199254740992.0)


def rng_fill(dist, shape, seed, dtype=F32, lo=0.0, hi=1.0):
    """Deterministic random tensor.

    ``dist`` is ``"normal"`` (standard normal) or ``"uniform"`` (on
    ``[lo, hi)``). ``seed`` may be an int or a sequence of ints; sequences are
    hashed through ``numpy.random.SeedSequence``.
    """
    shape = tuple(int(s) for s in shape)
    n = math.prod(shape)
    if not isinstance(seed, (int, np.integer)):
        seed = np.random.SeedSequence(list(seed))
    if dist == "uniform":
        u = _uniform01(seed, n)
        if (lo, hi) != (0.0, 1.0):
            u = lo + (hi - lo) * u
        out = u.astype(dtype)
        if hi == 1.0 and lo == 0.0:
            # f32 rounding can land on 1.0
            out = np.minimum(out, np.nextafter(dtype(1), dtype(0)))
        return out.reshape(shape)
    if dist == "normal":
        m = (n + 1) // 2
        u = _uniform01(seed, 2 * m)
        r = np.subtract(1.0, u[:m], out=u[:m])  # (0, 1], keeps log finite
        np.log(r, out=r)
        r *= -2.0
        np.sqrt(r, out=r)
        theta = u[m:]
        theta *= 2.0 * np.pi
        z = np.empty((m, 2))
        np.cos(theta, out=z[:, 0])
        np.sin(theta, out=z[:, 1])
        z *= r[:, None]
        return z.reshape(-1)[:n].astype(dtype).reshape(shape)
    raise ValueError(f"unknown distribution {dist!r}")


def derive_seed(*parts):
    """Fold integers into a single 63-bit seed (order-sensitive)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# 3-D convolution kernels
#
# x: (N, T, H, W, Cin), w: (kt, kh, kw, Cin, Cout). Cross-correlation, no
# kernel flip. conv3d_transposed is the exact adjoint of conv3d in x and
# conv3d_weight_grad is its adjoint in w; all three are derivatives of the
# trilinear form <conv3d(x, w), y>.

def conv_out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv_transposed_extent(n, k, s, p):
    return (n - 1) * s - 2 * p + k


def _triple(v):
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return v


def _im2col(x, kernel, stride, padding, out):
    """Patch matrix of x: (N * To * Ho * Wo, kt * kh * kw * Cin), taps-major."""
    (pt, ph, pw), (st, sh, sw) = padding, stride
    if pt or ph or pw:
        x = pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    N, C = x.shape[0], x.shape[4]
    (To, Ho, Wo), (kt, kh, kw) = out, kernel
    if C < 8:
        # few channels: one strided copy beats many tiny slice copies
        v = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=(1, 2, 3))
        v = v[:, : To * st : st, : Ho * sh : sh, : Wo * sw : sw]
        return np.ascontiguousarray(v.transpose(0, 1, 2, 3, 5, 6, 7, 4)).reshape(N * To * Ho * Wo, -1)
    cols = np.empty((N, To, Ho, Wo, kt, kh, kw, C), x.dtype)
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                cols[:, :, :, :, a, b, c] = x[:, a : a + To * st : st, b : b + Ho * sh : sh, c : c + Wo * sw : sw]
    return cols.reshape(N * To * Ho * Wo, -1)


def _out_extents(x, kernel, stride, padding):
    return tuple(conv_out_extent(n, k, s, p) for n, k, s, p in zip(x.shape[1:4], kernel, stride, padding))


def conv3d(x, w, stride=2, padding=1):
    x, w = np.asarray(x), np.asarray(w)
    stride, padding = _triple(stride), _triple(padding)
    kernel = w.shape[:3]
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d expects 5-d input and weights, got {x.shape}, {w.shape}")
    if x.shape[4] != w.shape[3]:
        raise ShapeError(f"conv3d channel mismatch: input has {x.shape[4]}, weights expect {w.shape[3]}")
    out = _out_extents(x, kernel, stride, padding)
    if min(out) < 1:
        raise ShapeError(f"conv3d input {x.shape} too small for kernel {kernel} with padding {padding}")
    if x.shape[4] >= 8 and _blockable(x.shape[1:4], kernel, stride, padding):
        cols = _block_cols(x, kernel, stride, padding, out)
        y = cols @ _block_weights(w, stride)
    else:
        cols = _im2col(x, kernel, stride, padding, out)
        y = cols @ w.reshape(-1, w.shape[4])
    return y.reshape((x.shape[0],) + out + (w.shape[4],))


def _taps(r, k, s):
    """Kernel taps a = r + s*m hitting output residue r."""
    return list(range(r, k, s))


def conv3d_transposed(y, w, stride=2, padding=1, out_shape=None):
    """Adjoint of :func:`conv3d` with respect to its input.

    ``out_shape`` gives ``(T, H, W)`` of the result; by default the smallest
    extents consistent with ``y``, i.e. ``(n - 1) * s - 2p + k``.

    Computed as a gather: output positions are split by their residue
    modulo the stride, and each residue class is an ordinary small
    correlation of ``y`` with the kernel taps that reach it.
    """
    y, w = np.asarray(y), np.asarray(w)
    stride, padding = _triple(stride), _triple(padding)
    kernel = w.shape[:3]
    if y.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"conv3d_transposed expects 5-d input and weights, got {y.shape}, {w.shape}")
    if y.shape[4] != w.shape[4]:
        raise ShapeError(f"conv3d_transposed channel mismatch: input has {y.shape[4]}, weights give {w.shape[4]}")
    if out_shape is None:
        out_shape = tuple(conv_transposed_extent(n, k, s, p) for n, k, s, p in zip(y.shape[1:4], kernel, stride, padding))
    out_shape = tuple(int(o) for o in out_shape)
    for n, o, k, s, p in zip(y.shape[1:4], out_shape, kernel, stride, padding):
        if conv_out_extent(o, k, s, p) != n:
            raise ShapeError(f"conv3d_transposed output extents {out_shape} inconsistent with input {y.shape}")
    if _blockable(out_shape, kernel, stride, padding) and _border_waste(out_shape, padding) < 2.0:
        return _block_transposed(y, w, stride, padding, out_shape)
    N, cin, cout = y.shape[0], w.shape[3], w.shape[4]
    dtype = np.result_type(y, w)
    n_in = y.shape[1:4]

    # per axis and residue: (first output j, count, first u, taps)
    plan = []
    lo = [0, 0, 0]
    hi = [0, 0, 0]
    for d in range(3):
        k, s, p, n, o = kernel[d], stride[d], padding[d], n_in[d], out_shape[d]
        entries = []
        for r in range(s):
            taps = _taps(r, k, s)
            u0 = -((r - p) // s)  # ceil((p - r) / s)
            u1 = (o - 1 + p - r) // s
            if not taps or u1 < u0:
                continue
            entries.append((s * u0 + r - p, u1 - u0 + 1, u0, taps))
            lo[d] = max(lo[d], len(taps) - 1 - u0)
            hi[d] = max(hi[d], u1 - (n - 1))
        plan.append(entries)
    if cin < 8:
        return _transposed_by_taps(y, w, stride, out_shape, plan, lo, hi)
    yp = pad(y, ((0, 0), (lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2]), (0, 0)))
    out = np.zeros((N,) + out_shape + (cin,), dtype)
    for jt, ct, ut, at in plan[0]:
        for jh, ch, uh, ah in plan[1]:
            for jw, cw, uw, aw in plan[2]:
                slabs, wsub = [], []
                for mt, a in enumerate(at):
                    for mh, b in enumerate(ah):
                        for mw, c in enumerate(aw):
                            t0, h0, w0 = ut - mt + lo[0], uh - mh + lo[1], uw - mw + lo[2]
                            slabs.append(yp[:, t0 : t0 + ct, h0 : h0 + ch, w0 : w0 + cw])
                            wsub.append(w[a, b, c].T)
                cols = np.stack(slabs, axis=4).reshape(N * ct * ch * cw, -1)
                res = cols @ np.stack(wsub).reshape(-1, cin)
                out[:, jt :: stride[0], jh :: stride[1], jw :: stride[2]][:, :ct, :ch, :cw] = res.reshape(N, ct, ch, cw, cin)
    return out


def _transposed_by_taps(y, w, stride, out_shape, plan, lo, hi):
    # few output channels: multiply every tap once, then gather-sum shifted slices
    kernel, cin, cout = w.shape[:3], w.shape[3], w.shape[4]
    wm = w.reshape(-1, cin, cout).transpose(2, 0, 1).reshape(cout, -1)
    z = (y.reshape(-1, cout) @ wm).reshape(y.shape[:4] + kernel + (cin,))
    zp = pad(z, ((0, 0), (lo[0], hi[0]), (lo[1], hi[1]), (lo[2], hi[2])) + ((0, 0),) * 4)
    out = np.zeros((y.shape[0],) + out_shape + (cin,), z.dtype)
    for jt, ct, ut, at in plan[0]:
        for jh, ch, uh, ah in plan[1]:
            for jw, cw, uw, aw in plan[2]:
                dst = out[:, jt :: stride[0], jh :: stride[1], jw :: stride[2]][:, :ct, :ch, :cw]
                for mt, a in enumerate(at):
                    for mh, b in enumerate(ah):
                        for mw, c in enumerate(aw):
                            t0, h0, w0 = ut - mt + lo[0], uh - mh + lo[1], uw - mw + lo[2]
                            dst += zp[:, t0 : t0 + ct, h0 : h0 + ch, w0 : w0 + cw, a, b, c]
    return out


def conv3d_weight_grad(x, dy, kernel, stride=2, padding=1):
    """Adjoint of :func:`conv3d` with respect to its weights."""
    x, dy = np.asarray(x), np.asarray(dy)
    kernel, stride, padding = _triple(kernel), _triple(stride), _triple(padding)
    out = _out_extents(x, kernel, stride, padding)
    if tuple(dy.shape[1:4]) != out or dy.shape[0] != x.shape[0]:
        raise ShapeError(f"conv3d_weight_grad: output grad {dy.shape} does not match input {x.shape}")
    if x.shape[4] >= 8 and _blockable(x.shape[1:4], kernel, stride, padding):
        cols = _block_cols(x, kernel, stride, padding, out)
        g = cols.T @ dy.reshape(-1, dy.shape[4])
        return _unblock_weights(g, kernel, stride, x.shape[4])
    cols = _im2col(x, kernel, stride, padding, out)
    g = cols.T @ dy.reshape(-1, dy.shape[4])
    return g.reshape(kernel + (x.shape[4], dy.shape[4]))


# Space-to-depth fast path. When every kernel extent is a multiple of its
# stride and the padded input tiles exactly into stride-sized blocks, a
# strided conv equals a stride-1 conv over blocks: kernel k = m * s becomes
# m taps, each seeing a whole (st, sh, sw, C) block.

def _blockable(extents, kernel, stride, padding):
    return all(k % s == 0 and (n + 2 * p) % s == 0
               for n, k, s, p in zip(extents, kernel, stride, padding))


def _border_waste(extents, padding):
    # the blocked transpose also computes the padding border
    return math.prod(n + 2 * p for n, p in zip(extents, padding)) / math.prod(extents)


def _to_blocks(x, stride, padding):
    (pt, ph, pw), (st, sh, sw) = padding, stride
    if pt or ph or pw:
        x = pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    N, Tp, Hp, Wp, C = x.shape
    if (st, sh, sw) == (1, 1, 1):
        return x
    xb = x.reshape(N, Tp // st, st, Hp // sh, sh, Wp // sw, sw, C).transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return np.ascontiguousarray(xb).reshape(N, Tp // st, Hp // sh, Wp // sw, st * sh * sw * C)


def _block_cols(x, kernel, stride, padding, out):
    xb = _to_blocks(x, stride, padding)
    mt, mh, mw = (k // s for k, s in zip(kernel, stride))
    To, Ho, Wo = out
    N, D = xb.shape[0], xb.shape[4]
    if mt * mh * mw == 1:
        return xb[:, :To, :Ho, :Wo].reshape(N * To * Ho * Wo, D)
    cols = np.empty((N, To, Ho, Wo, mt, mh, mw, D), xb.dtype)
    for a in range(mt):
        for b in range(mh):
            for c in range(mw):
                cols[:, :, :, :, a, b, c] = xb[:, a : a + To, b : b + Ho, c : c + Wo]
    return cols.reshape(N * To * Ho * Wo, -1)


def _block_weights(w, stride):
    """(kt, kh, kw, C, Co) -> (mt*mh*mw*st*sh*sw*C, Co) in block-column order."""
    (kt, kh, kw, C, Co), (st, sh, sw) = w.shape, stride
    wb = w.reshape(kt // st, st, kh // sh, sh, kw // sw, sw, C, Co).transpose(0, 2, 4, 1, 3, 5, 6, 7)
    return wb.reshape(-1, Co)


def _unblock_weights(g, kernel, stride, C):
    (kt, kh, kw), (st, sh, sw) = kernel, stride
    Co = g.shape[-1]
    gb = g.reshape(kt // st, kh // sh, kw // sw, st, sh, sw, C, Co).transpose(0, 3, 1, 4, 2, 5, 6, 7)
    return np.ascontiguousarray(gb).reshape(kt, kh, kw, C, Co)


def _block_transposed(y, w, stride, padding, out_shape):
    kernel, C, Co = w.shape[:3], w.shape[3], w.shape[4]
    (st, sh, sw), (pt, ph, pw) = stride, padding
    mt, mh, mw = (k // s for k, s in zip(kernel, stride))
    N, To, Ho, Wo = y.shape[:4]
    Tb, Hb, Wb = To + mt - 1, Ho + mh - 1, Wo + mw - 1
    yp = pad(y, ((0, 0), (mt - 1, mt - 1), (mh - 1, mh - 1), (mw - 1, mw - 1), (0, 0)))
    # block v collects y[v - m] through tap m
    cols = np.empty((N, Tb, Hb, Wb, mt, mh, mw, Co), y.dtype)
    for a in range(mt):
        for b in range(mh):
            for c in range(mw):
                cols[:, :, :, :, a, b, c] = yp[:, mt - 1 - a : mt - 1 - a + Tb, mh - 1 - b : mh - 1 - b + Hb,
                                              mw - 1 - c : mw - 1 - c + Wb]
    wb = w.reshape(mt, st, mh, sh, mw, sw, C, Co).transpose(0, 2, 4, 7, 1, 3, 5, 6).reshape(mt * mh * mw * Co, -1)
    xb = cols.reshape(N * Tb * Hb * Wb, -1) @ wb
    if (st, sh, sw) != (1, 1, 1):
        xb = xb.reshape(N, Tb, Hb, Wb, st, sh, sw, C).transpose(0, 1, 4, 2, 5, 3, 6, 7)
    x = xb.reshape(N, Tb * st, Hb * sh, Wb * sw, C)
    T_, H_, W_ = out_shape
    return np.ascontiguousarray(x[:, pt : pt + T_, ph : ph + H_, pw : pw + W_])
