"""Fit the encoder + generator to repair four salt-and-pepper clips.

With only four clips the pair can memorize them, which makes this a quick
way to see the reconstruction term doing its job: PSNR of the repaired clip
should sit well above that of the noisy input. Around 300 steps is enough
for a visible gap; the acceptance suite runs 1500.

    python3 demos/inpainting_overfit.py 300
"""

import sys

import numpy as np

from ivgan import apps
from ivgan import autograd as A
from ivgan import data as D
from ivgan import evalcli
from ivgan import models as M
from ivgan import wgan

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

spec = apps.TaskSpec(task="inpaint", corruption="salt_pepper", noise_p=0.25)
ds = D.SynthDataset(D.SynthSpec(seed=100), 4)
cfg = wgan.TrainConfig(batch_size=4, seed=0, scale="desk")
trainer = apps.TaskTrainer(cfg, M.NetConfig.preset("desk"), spec, D.batcher(ds, 4, 0))

for i in range(steps):
    rep = trainer.train_step()
    if (i + 1) % 25 == 0:
        print(f"step {i + 1:4d}  L_AP {rep.extra['l_ap']:.5f}  W {rep.wasserstein:.3f}")

clips = np.stack([ds[i] for i in range(4)])
y = apps.make_condition(spec, clips, seed=1)
with A.no_grad():
    fixed = apps.reconstruct(spec, trainer.generator, trainer.encoder, y, training=False).value
print(f"gray PSNR  noisy input {evalcli.psnr(y, clips):.2f} dB   repaired {evalcli.psnr(fixed, clips):.2f} dB")
