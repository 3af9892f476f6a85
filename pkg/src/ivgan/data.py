"""Synthetic moving-square clips and seeded batching.

Two presets stand in for real footage at desk scale:

``moving_squares_static_bg``
    a fixed background (solid colour or linear gradient) with 1-3 coloured
    squares moving at constant integer velocity.
``moving_squares_panning_bg``
    the same squares over a striped texture that translates every frame,
    i.e. a moving camera.

Every clip is a pure function of ``(spec.seed, index)``; values are in
[-1, 1].
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

PRESETS = ("moving_squares_static_bg", "moving_squares_panning_bg")

PALETTE = np.array([
    [0.9, 0.1, 0.1],
    [0.1, 0.8, 0.2],
    [0.2, 0.3, 0.95],
    [0.95, 0.85, 0.1],
    [0.9, 0.3, 0.85],
    [0.1, 0.85, 0.9],
])


@dataclass(frozen=True)
class SynthSpec:
    preset: str = "moving_squares_static_bg"
    frames: int = 8
    height: int = 16
    width: int = 16
    objects: tuple = (1, 3)  # inclusive range
    velocity: int = 2  # max |v| per axis, pixels per frame
    size: tuple = (3, 5)  # square side, inclusive range
    pan_velocity: tuple = (1, 2)  # |v| range for the background
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {PRESETS}")


@dataclass(frozen=True)
class Square:
    pos: tuple  # top-left (row, col) at frame 0
    vel: tuple  # (drow, dcol) per frame
    size: int
    color: tuple


def render(background, squares, frames):
    """Draw squares over a background, clipped at the frame edges.

    ``background`` is (H, W, 3) for a static scene or (T, H, W, 3) for a
    moving one; values in [0, 1]. Returns a [-1, 1] clip.
    """
    bg = np.asarray(background, np.float64)
    if bg.ndim == 3:
        bg = np.broadcast_to(bg, (frames,) + bg.shape)
    clip = np.array(bg)
    _, H, W, _ = clip.shape
    for t in range(frames):
        for sq in squares:
            r = sq.pos[0] + sq.vel[0] * t
            c = sq.pos[1] + sq.vel[1] * t
            r0, r1 = max(r, 0), min(r + sq.size, H)
            c0, c1 = max(c, 0), min(c + sq.size, W)
            if r0 < r1 and c0 < c1:
                clip[t, r0:r1, c0:c1] = sq.color
    return (clip * 2.0 - 1.0).astype(np.float32)


def _static_background(rng, H, W):
    a, b = PALETTE[rng.integers(len(PALETTE))] * 0.4, PALETTE[rng.integers(len(PALETTE))] * 0.4
    if rng.random() < 0.5:
        return np.broadcast_to(a, (H, W, 3)).copy()
    ramp = np.linspace(0.0, 1.0, W)[None, :, None]
    return np.broadcast_to(a + (b - a) * ramp, (H, W, 3)).copy()


def _panning_background(rng, frames, H, W, vmin, vmax):
    # two incommensurate stripe periods so no pixel is constant in time
    v = np.zeros(2, int)
    while not v.any():
        v = rng.integers(-vmax, vmax + 1, size=2)
        v = np.where(np.abs(v) < vmin, 0, v)
    period = rng.uniform(5.3, 9.7, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    lo = PALETTE[rng.integers(len(PALETTE))] * 0.3
    hi = PALETTE[rng.integers(len(PALETTE))] * 0.3 + 0.2
    t = np.arange(frames)[:, None, None]
    rows = np.arange(H)[None, :, None]
    cols = np.arange(W)[None, None, :]
    u = rows + v[0] * t
    w = cols + v[1] * t
    s = 0.5 + 0.25 * np.sin(2 * np.pi * u / period[0] + phase[0]) + 0.25 * np.sin(2 * np.pi * w / period[1] + phase[1])
    s = s * 0.8 + 0.1 * (1 + np.sin(2 * np.pi * (u + w) / 7.7))  # keeps both axes moving
    s = np.clip(s, 0, 1)[..., None]
    return lo + (hi - lo) * s


def sample_squares(rng, spec):
    H, W = spec.height, spec.width
    count = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
    out = []
    for _ in range(count):
        size = int(rng.integers(spec.size[0], spec.size[1] + 1))
        vel = tuple(int(v) for v in rng.integers(-spec.velocity, spec.velocity + 1, size=2))
        pos = (int(rng.integers(0, H - size + 1)), int(rng.integers(0, W - size + 1)))
        color = tuple(float(c) for c in PALETTE[rng.integers(len(PALETTE))])
        out.append(Square(pos, vel, size, color))
    return out


def synth_clip(spec, index):
    """Clip ``index`` of the synthetic corpus described by ``spec``: (T, H, W, 3)."""
    rng = np.random.Generator(np.random.PCG64(T.derive_seed(spec.seed, index)))
    if spec.preset == "moving_squares_static_bg":
        bg = _static_background(rng, spec.height, spec.width)
    else:
        bg = _panning_background(rng, spec.frames, spec.height, spec.width, *spec.pan_velocity)
    return render(bg, sample_squares(rng, spec), spec.frames)


class SynthDataset:
    """A finite, indexable corpus of synthetic clips.

    Clips are cached on first access unless ``cache=False``. Large corpora
    should skip the cache: synthesis is cheap at desk scale, and a corpus
    big enough that the critic rarely sees a clip twice does not fit in
    memory.
    """

    def __init__(self, spec, size, cache=True):
        self.spec = spec
        self.size = int(size)
        self._cache = {} if cache else None

    def __len__(self):
        return self.size

    def __getitem__(self, i):
        if not 0 <= i < self.size:
            raise IndexError(i)
        if self._cache is None:
            return synth_clip(self.spec, i)
        if i not in self._cache:
            self._cache[i] = synth_clip(self.spec, i)
        return self._cache[i]


def batcher(source, batch_size, seed, epochs=None):
    """Yield shuffled ``(batch, T, H, W, C)`` arrays, one permutation per epoch.

    Every clip appears exactly once per epoch. A trailing partial batch is
    yielded as is, except that a lone leftover clip is folded into the
    previous batch (batch norm needs two samples).
    """
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    n = len(source)
    if n < 2:
        raise ValueError("need at least 2 clips")
    epoch = 0
    while epochs is None or epoch < epochs:
        order = np.argsort(T.rng_fill("uniform", (n,), T.derive_seed(seed, epoch), dtype=np.float64), kind="stable")
        chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            last = chunks.pop()
            chunks[-1] = np.concatenate([chunks[-1], last])
        for idx in chunks:
            yield np.stack([source[int(i)] for i in idx])
        epoch += 1

