"""Short unconditional run at desk scale, then a few samples written to disk.

A couple of hundred steps will not produce convincing squares, but the
curves already show the critic's Wasserstein estimate and the penalty
settling. Pass a step count and an output directory to change the defaults.

    python3 demos/desk_training.py 200 /tmp/ivgan_desk
"""

import sys

import numpy as np

from ivgan import autograd as A
from ivgan import data as D
from ivgan import io
from ivgan import models as M
from ivgan import tensor as T
from ivgan import wgan

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
out = sys.argv[2] if len(sys.argv) > 2 else "ivgan_desk_demo"

net = M.NetConfig.preset("desk")
cfg = wgan.TrainConfig(batch_size=16, total_steps=steps, seed=0, scale="desk")
# a large corpus drawn on the fly: a small one would be memorized by the critic
ds = D.SynthDataset(D.SynthSpec(preset="moving_squares_panning_bg"), 100_000, cache=False)


def show(rep):
    if rep.step % 10 == 0:
        print(f"step {rep.step:4d}  W {rep.wasserstein:8.4f}  GP {rep.penalty:.4f}")


trainer, reports, ckpts = wgan.train_loop(cfg, net, D.batcher(ds, 16, 0), out, on_report=show)
print("checkpoint:", ckpts[-1])

gp = np.array([r.penalty for r in reports])
k = max(1, len(gp) // 5)
print(f"penalty, first {k} steps {gp[:k].mean():.4f}, last {k} steps {gp[-k:].mean():.4f}")

with A.no_grad():
    z = T.rng_fill("normal", (2, net.z_dim), 7)
    clips = trainer.generator(A.Var(z), training=False).value
for i, clip in enumerate(clips):
    io.export_frames(clip, f"{out}/sample_{i}")
print(f"frames written under {out}/sample_*")
