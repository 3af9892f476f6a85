"""Conditional tasks: an encoder maps a condition clip ``y`` to a latent code
that the generator decodes, trained against the critic plus a weighted
reconstruction term ``L_AP``.

Tasks and their conditions:

``colorize_supervised``    y = gray(x);  L_AP = l2(G(E(y)), x) in RGB
``colorize_unsupervised``  y = gray(x);  L_AP = l2(gray(G(E(y))), y)
``inpaint``                y = corrupt(x) (salt & pepper or a hole);  L_AP = l2(G(E(y)), x)
``predict``                y = x[:, :1];  L_AP = l2(G(E(y))[:, :1], y)

For ``predict`` the single frame is repeated along time before encoding so
one encoder architecture serves every task. The critic only ever sees
clips, never the condition.
"""

from collections import OrderedDict
from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as A
from . import models
from . import tensor as T
from .wgan import WGANTrainer

TASKS = ("colorize_supervised", "colorize_unsupervised", "inpaint", "predict")
CORRUPTIONS = ("salt_pepper", "hole")
HOLE_MODES = ("center", "random")
LUMA = np.array([0.299, 0.587, 0.114])

# full-scale hole side at 64 pixels of width
_FULL_HOLE, _FULL_WIDTH = 20, 64


def hole_size_for(width):
    """Hole side covering the same fraction of the frame as 20 px at width 64."""
    return max(1, int(round(_FULL_HOLE * width / _FULL_WIDTH)))


@dataclass(frozen=True)
class TaskSpec:
    task: str = "inpaint"
    nu: float = 1000.0
    corruption: str = "salt_pepper"
    noise_p: float = 0.25
    hole_size: int = 0  # 0: derive from the frame width
    hole_mode: str = "center"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.corruption not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.corruption!r}")
        if self.hole_mode not in HOLE_MODES:
            raise ValueError(f"unknown hole mode {self.hole_mode!r}")
        if not 0.0 <= self.noise_p <= 1.0:
            raise ValueError("noise_p must be in [0, 1]")
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if self.hole_size < 0:
            raise ValueError("hole_size must be nonnegative")

    def condition_channels(self, channels=3):
        return 1 if self.task.startswith("colorize") else channels

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# condition operators (plain arrays)

def to_grayscale(x):
    """BT.601 luma of a [-1, 1] RGB clip (any leading axes), shape (..., 1)."""
    x = np.asarray(x)
    if x.shape[-1] != 3:
        raise T.ShapeError(f"to_grayscale needs 3 channels, got {x.shape[-1]}")
    u = (x.astype(np.float64) + 1.0) * 0.5
    g = u @ LUMA
    return (g * 2.0 - 1.0)[..., None].astype(x.dtype)


def gray_var(x):
    """Differentiable :func:`to_grayscale` on a Var."""
    # affine in x with weights summing to one, so it commutes with the [0,1] map
    w = A.as_var(LUMA.reshape(3, 1).astype(x.dtype), x)
    n = x.shape[:-1]
    flat = A.reshape(x, (int(np.prod(n)), 3))
    return A.reshape(A.matmul(flat, w), n + (1,))


def salt_pepper(x, p, seed):
    """Set each pixel (all channels together) to -1 or +1 with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    x = np.asarray(x)
    pix = x.shape[:-1]
    hit = T.rng_fill("uniform", pix, T.derive_seed(seed, 0), dtype=np.float64) < p
    salt = T.rng_fill("uniform", pix, T.derive_seed(seed, 1), dtype=np.float64) < 0.5
    val = np.where(salt, 1.0, -1.0).astype(x.dtype)
    return np.where(hit[..., None], val[..., None], x)


def cut_hole(x, size, mode="center", seed=0, fill=0.0):
    """Blank a ``size`` x ``size`` square in every frame.

    ``x`` is one clip (T, H, W, C) or a batch (N, T, H, W, C). The hole sits
    at the same place in all frames of a clip; in ``random`` mode each clip
    of a batch gets its own position. Returns ``(clip, mask)`` where the
    mask is 1 inside the hole, shaped like ``x`` without the channel axis.
    """
    x = np.asarray(x)
    if mode not in HOLE_MODES:
        raise ValueError(f"unknown hole mode {mode!r}")
    single = x.ndim == 4
    xb = x[None] if single else x
    n, _, H, W, _ = xb.shape
    if size < 1 or size > H or size > W:
        raise ValueError(f"hole of size {size} does not fit a {H}x{W} frame")
    mask = np.zeros(xb.shape[:-1], np.float32)
    for i in range(n):
        if mode == "center":
            r, c = (H - size) // 2, (W - size) // 2
        else:
            u = T.rng_fill("uniform", (2,), T.derive_seed(seed, i), dtype=np.float64)
            r = int(u[0] * (H - size + 1))
            c = int(u[1] * (W - size + 1))
        mask[i, :, r:r + size, c:c + size] = 1.0
    out = np.where(mask[..., None] > 0, np.asarray(fill, xb.dtype), xb)
    if single:
        return out[0], mask[0]
    return out, mask


def make_condition(spec, real, seed):
    """Condition ``y`` for a batch of real clips."""
    real = np.asarray(real)
    if spec.task.startswith("colorize"):
        return to_grayscale(real)
    if spec.task == "inpaint":
        if spec.corruption == "salt_pepper":
            return salt_pepper(real, spec.noise_p, seed)
        size = spec.hole_size or hole_size_for(real.shape[-2])
        return cut_hole(real, size, spec.hole_mode, seed)[0]
    return real[:, :1]


def encoder_input(spec, y, frames):
    """What the encoder sees: ``y`` itself, or the first frame repeated in time."""
    y = np.asarray(y)
    if spec.task == "predict":
        if y.shape[1] != 1:
            raise T.ShapeError(f"predict conditions on one frame, got {y.shape[1]}")
        return np.repeat(y, frames, axis=1)
    return y


# ---------------------------------------------------------------------------
# losses

def l2_loss(a, b):
    """Mean squared difference over all elements."""
    if tuple(a.shape) != tuple(b.shape):
        raise T.ShapeError(f"l2_loss: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    b = A.as_var(b, a)
    return A.mean(A.square(A.sub(a, b)))


def reconstruction_loss(spec, fake, real, y):
    """L_AP for ``spec.task`` given the generated clip, the ground truth and the condition."""
    y = A.Var(np.asarray(getattr(y, "value", y)))
    real = A.Var(np.asarray(getattr(real, "value", real)))
    if spec.task == "colorize_supervised":
        return l2_loss(fake, real)
    if spec.task == "colorize_unsupervised":
        if y.shape[-1] != 1:
            raise T.ShapeError("unsupervised colorization needs a grayscale condition")
        return l2_loss(gray_var(fake), y)
    if spec.task == "inpaint":
        return l2_loss(fake, real)
    if y.shape[1] != 1:
        raise T.ShapeError("predict needs a single-frame condition")
    return l2_loss(fake[:, 0:1], y)


def future_loss(fake, frame):
    """Prediction L_AP: first generated frame against the conditioning frame."""
    return reconstruction_loss(TaskSpec(task="predict"), fake, frame, frame)


def reconstruct(spec, generator, encoder, y, training=True):
    x = encoder_input(spec, y, generator.cfg.frames)
    if x.shape[-1] != encoder.in_channels:
        raise T.ShapeError(f"task {spec.task} gives {x.shape[-1]}-channel conditions, "
                           f"encoder takes {encoder.in_channels}")
    return generator(encoder(A.Var(x), training), training)


def task_loss(spec, generator, encoder, critic, real, seed, y=None):
    """Generator/encoder objective ``-E[C(G(E(y)))] + nu * L_AP``.

    Returns ``(total, diagnostics)``; diagnostics holds the adversarial and
    reconstruction terms as floats.
    """
    real = np.asarray(getattr(real, "value", real))
    if y is None:
        y = make_condition(spec, real, seed)
    fake = reconstruct(spec, generator, encoder, y)
    adv = A.neg(A.mean(critic(fake)))
    lap = reconstruction_loss(spec, fake, real, y)
    total = adv if spec.nu == 0 else A.add(adv, A.mul(lap, float(spec.nu)))
    return total, OrderedDict(adversarial=float(adv.value), l_ap=float(lap.value))


def build_encoder_for(spec, net_cfg, seed):
    return models.build_encoder(net_cfg, seed, spec.condition_channels(net_cfg.channels))


# ---------------------------------------------------------------------------
# training

class TaskTrainer(WGANTrainer):
    """WGAN-GP where fakes are ``G(E(y))``; the generator step also updates ``E``."""

    def __init__(self, cfg, net_cfg, task, data, generator=None, critic=None, encoder=None):
        super().__init__(cfg, net_cfg, data, generator, critic)
        self.task = task
        self.encoder = encoder or build_encoder_for(task, net_cfg, T.derive_seed(cfg.seed, 12))
        self.opt["encoder"] = self._adam()
        self.opt.move_to_end("critic")

    def generator_side(self):
        return OrderedDict(generator=self.generator, encoder=self.encoder)

    def make_fake(self, real, seed):
        y = make_condition(self.task, real, seed)
        return reconstruct(self.task, self.generator, self.encoder, y)

    def generator_objective(self, real, seed):
        loss, diag = task_loss(self.task, self.generator, self.encoder, self.critic, real, seed)
        return loss, diag

    def state_arrays(self):
        out = super().state_arrays()
        out["meta/encoder_channels"] = np.array([self.encoder.in_channels], np.float32)
        return out
