"""Generator, critic and encoder networks.

All three are built from a :class:`NetConfig`. The ``full`` preset is the
32x64x64 architecture: a linear layer to 2x4x4x512 followed by four
up-sampling blocks for the generator, five strided convolutions plus a
linear head for the critic, and four strided convolutions plus a linear map
to the latent space for the encoder. The ``desk`` preset keeps the same
block structure at 8x16x16 with one fewer resolution level.
"""

from collections import OrderedDict
from dataclasses import dataclass, asdict
import math

import numpy as np

from . import autograd as A
from . import layers as L
from . import tensor as T

PRESETS = {
    "full": dict(frames=32, height=64, width=64, base_width=64, depth=4),
    "desk": dict(frames=8, height=16, width=16, base_width=32, depth=3),
}


@dataclass(frozen=True)
class NetConfig:
    scale: str = "full"
    z_dim: int = 100
    frames: int = 32
    height: int = 64
    width: int = 64
    channels: int = 3
    base_width: int = 64
    depth: int = 4  # generator up-sampling blocks == encoder strided convs

    @classmethod
    def preset(cls, scale, **overrides):
        if scale not in PRESETS:
            raise ValueError(f"unknown scale preset {scale!r}")
        kw = dict(PRESETS[scale], scale=scale)
        kw.update(overrides)
        return cls(**kw)

    def __post_init__(self):
        f = 2 ** self.depth
        for name in ("frames", "height", "width"):
            n = getattr(self, name)
            if n < f or n % f:
                raise ValueError(f"{name}={n} must be a positive multiple of 2**depth={f}")
        if self.depth < 1 or self.z_dim < 1 or self.base_width < 1:
            raise ValueError("depth, z_dim and base_width must be positive")

    @property
    def clip_shape(self):
        return (self.frames, self.height, self.width, self.channels)

    @property
    def seed_extents(self):
        f = 2 ** self.depth
        return (self.frames // f, self.height // f, self.width // f)

    def to_dict(self):
        return asdict(self)


def _down_spec(cin, cout, extents):
    # an axis already at extent 1 is not strided
    k = tuple(4 if n > 1 else 1 for n in extents)
    s = tuple(2 if n > 1 else 1 for n in extents)
    p = tuple(1 if n > 1 else 0 for n in extents)
    return L.ConvSpec(cin, cout, k, s, p)


class Net:
    """Ordered layers over a :class:`~ivgan.layers.ParamSet`."""

    kind = "net"

    def __init__(self, cfg):
        self.cfg = cfg
        self.params = L.ParamSet()
        self.bn = OrderedDict()  # name -> BatchNormStats
        self.layers = []  # (name, kind, in_shape, out_shape) per sample

    def _param(self, name, value):
        return self.params.add(f"{self.kind}/{name}", value)

    def p(self, name):
        return self.params[f"{self.kind}/{name}"]

    def shape_walk(self):
        """Per-sample tensor shapes from input to output, without data."""
        return [self.layers[0][2]] + [layer[3] for layer in self.layers]

    def buffers(self):
        out = OrderedDict()
        for name, st in self.bn.items():
            out[f"{self.kind}/{name}.running_mean"] = st.mean
            out[f"{self.kind}/{name}.running_var"] = st.var
        return out

    def load_buffers(self, arrays):
        for name, st in self.bn.items():
            st.mean = np.asarray(arrays[f"{self.kind}/{name}.running_mean"], dtype=st.mean.dtype)
            st.var = np.asarray(arrays[f"{self.kind}/{name}.running_var"], dtype=st.var.dtype)

    def astype(self, dtype):
        self.params.astype(dtype)
        for st in self.bn.values():
            st.mean = st.mean.astype(dtype)
            st.var = st.var.astype(dtype)
        return self

    def expected_param_count(self):
        raise NotImplementedError

    def __call__(self, x, training=True):
        return self.forward(x, training)


class Generator(Net):
    kind = "generator"

    def __init__(self, cfg, seed=0):
        super().__init__(cfg)
        d, b = cfg.depth, cfg.base_width
        ext = cfg.seed_extents
        c0 = b * 2 ** (d - 1)
        n0 = math.prod(ext) * c0
        self._param("lin.w", L.he_init((cfg.z_dim, n0), cfg.z_dim, T.derive_seed(seed, 1, 0)))
        self._param("lin.b", np.zeros(n0, np.float32))
        self._param("bn0.gamma", np.ones(c0, np.float32))
        self._param("bn0.beta", np.zeros(c0, np.float32))
        self.bn["bn0"] = L.BatchNormStats(c0)
        self.layers.append(("lin", "linear+bn+relu", (cfg.z_dim,), ext + (c0,)))
        self.specs = []
        cin = c0
        for i in range(1, d + 1):
            last = i == d
            cout = cfg.channels if last else cin // 2
            spec = L.ConvSpec(cin, cout, transposed=True)
            self.specs.append(spec)
            self._param(f"up{i}.w", L.he_init(spec.weight_shape, spec.fan_in, T.derive_seed(seed, 1, i)))
            self._param(f"up{i}.b", np.zeros(cout, np.float32))
            if not last:
                self._param(f"bn{i}.gamma", np.ones(cout, np.float32))
                self._param(f"bn{i}.beta", np.zeros(cout, np.float32))
                self.bn[f"bn{i}"] = L.BatchNormStats(cout)
            new = spec.out_extents(ext)
            self.layers.append((f"up{i}", "tanh" if last else "convT+bn+relu", ext + (cin,), new + (cout,)))
            ext, cin = new, cout

    def expected_param_count(self):
        # linear (w, b) + bn0 (gamma, beta) + depth convT (w, b) + (depth-1) bn
        return 4 + 2 * self.cfg.depth + 2 * (self.cfg.depth - 1)

    def forward(self, z, training=True):
        cfg = self.cfg
        if z.ndim != 2 or z.shape[1] != cfg.z_dim:
            raise T.ShapeError(f"generator expects (N, {cfg.z_dim}) latents, got {z.shape}")
        if not np.all(np.isfinite(z.value)):
            raise FloatingPointError("non-finite latent code")
        n = z.shape[0]
        h = L.linear(z, self.p("lin.w"), self.p("lin.b"))
        h = A.reshape(h, (n,) + self.layers[0][3])
        h = L.batch_norm(h, self.p("bn0.gamma"), self.p("bn0.beta"), self.bn["bn0"], training)
        h = L.relu(h)
        d = cfg.depth
        for i, spec in enumerate(self.specs, start=1):
            h = L.conv3d(h, spec, self.p(f"up{i}.w"), self.p(f"up{i}.b"))
            if i < d:
                h = L.batch_norm(h, self.p(f"bn{i}.gamma"), self.p(f"bn{i}.beta"), self.bn[f"bn{i}"], training)
                h = L.relu(h)
            else:
                h = L.tanh(h)
        if not np.all(np.isfinite(h.value)):
            raise FloatingPointError("generator produced non-finite values")
        return h


class Critic(Net):
    """Strided convs + linear head; layer norm (never batch norm) inside."""

    kind = "critic"

    def __init__(self, cfg, seed=0, norm="layer"):
        super().__init__(cfg)
        if norm != "layer":
            raise ValueError("the critic must use layer normalization: batch statistics couple "
                             "samples and break the per-sample gradient penalty")
        d, b = cfg.depth, cfg.base_width
        ext = (cfg.frames, cfg.height, cfg.width)
        cin = cfg.channels
        self.specs = []
        n_conv = d + 1
        for i in range(1, n_conv + 1):
            cout = b * 2 ** (i - 1)
            spec = _down_spec(cin, cout, ext)
            self.specs.append(spec)
            self._param(f"conv{i}.w", L.he_init(spec.weight_shape, spec.fan_in, T.derive_seed(seed, 2, i)))
            self._param(f"conv{i}.b", np.zeros(cout, np.float32))
            if i > 1:
                self._param(f"ln{i}.gamma", np.ones(cout, np.float32))
                self._param(f"ln{i}.beta", np.zeros(cout, np.float32))
            new = spec.out_extents(ext)
            self.layers.append((f"conv{i}", "conv+lrelu" if i == 1 else "conv+ln+lrelu",
                                ext + (cin,), new + (cout,)))
            ext, cin = new, cout
        flat = math.prod(ext) * cin
        self._param("head.w", L.he_init((flat, 1), flat, T.derive_seed(seed, 2, 99)))
        self._param("head.b", np.zeros(1, np.float32))
        self.layers.append(("head", "linear", ext + (cin,), ()))

    def expected_param_count(self):
        n_conv = self.cfg.depth + 1
        return 2 * n_conv + 2 * (n_conv - 1) + 2

    def forward(self, x, training=True):
        cfg = self.cfg
        if tuple(x.shape[1:]) != cfg.clip_shape:
            raise T.ShapeError(f"critic expects clips of shape {cfg.clip_shape}, got {tuple(x.shape[1:])}")
        h = x
        for i, spec in enumerate(self.specs, start=1):
            h = L.conv3d(h, spec, self.p(f"conv{i}.w"), self.p(f"conv{i}.b"))
            if i > 1:
                h = L.layer_norm(h, self.p(f"ln{i}.gamma"), self.p(f"ln{i}.beta"))
            h = L.leaky_relu(h)
        n = x.shape[0]
        h = A.reshape(h, (n, math.prod(h.shape[1:])))
        out = L.linear(h, self.p("head.w"), self.p("head.b"))
        return A.reshape(out, (n,))


class Encoder(Net):
    """Strided convs with batch norm + ReLU, then a linear map to the latent space."""

    kind = "encoder"

    def __init__(self, cfg, in_channels=3, seed=0):
        super().__init__(cfg)
        if in_channels not in (1, 3):
            raise ValueError("encoder input must be grayscale (1) or RGB (3)")
        self.in_channels = in_channels
        d, b = cfg.depth, cfg.base_width
        ext = (cfg.frames, cfg.height, cfg.width)
        cin = in_channels
        self.specs = []
        for i in range(1, d + 1):
            cout = b * 2 ** (i - 1)
            spec = _down_spec(cin, cout, ext)
            self.specs.append(spec)
            self._param(f"conv{i}.w", L.he_init(spec.weight_shape, spec.fan_in, T.derive_seed(seed, 3, i)))
            self._param(f"conv{i}.b", np.zeros(cout, np.float32))
            self._param(f"bn{i}.gamma", np.ones(cout, np.float32))
            self._param(f"bn{i}.beta", np.zeros(cout, np.float32))
            self.bn[f"bn{i}"] = L.BatchNormStats(cout)
            new = spec.out_extents(ext)
            self.layers.append((f"conv{i}", "conv+bn+relu", ext + (cin,), new + (cout,)))
            ext, cin = new, cout
        flat = math.prod(ext) * cin
        self._param("lin.w", L.he_init((flat, cfg.z_dim), flat, T.derive_seed(seed, 3, 99)))
        self._param("lin.b", np.zeros(cfg.z_dim, np.float32))
        self.layers.append(("lin", "linear", ext + (cin,), (cfg.z_dim,)))

    def expected_param_count(self):
        return 4 * self.cfg.depth + 2

    def forward(self, y, training=True):
        cfg = self.cfg
        want = (cfg.frames, cfg.height, cfg.width, self.in_channels)
        if tuple(y.shape[1:]) != want:
            raise T.ShapeError(f"encoder expects inputs of shape {want}, got {tuple(y.shape[1:])}")
        h = y
        for i, spec in enumerate(self.specs, start=1):
            h = L.conv3d(h, spec, self.p(f"conv{i}.w"), self.p(f"conv{i}.b"))
            h = L.batch_norm(h, self.p(f"bn{i}.gamma"), self.p(f"bn{i}.beta"), self.bn[f"bn{i}"], training)
            h = L.relu(h)
        n = y.shape[0]
        h = A.reshape(h, (n, math.prod(h.shape[1:])))
        return L.linear(h, self.p("lin.w"), self.p("lin.b"))


def build_generator(cfg, seed=0):
    return Generator(cfg, seed)


def build_critic(cfg, seed=0):
    return Critic(cfg, seed)


def build_encoder(cfg, seed=0, in_channels=3):
    return Encoder(cfg, in_channels, seed)


def generator_forward(net, z, training=True):
    return net.forward(z, training)


def critic_forward(net, x):
    return net.forward(x)


def encoder_forward(net, y, training=True):
    return net.forward(y, training)

