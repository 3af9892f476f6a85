import numpy as np
import pytest

from ivgan import apps
from ivgan import autograd as A
from ivgan import data as D
from ivgan import models as M
from ivgan import tensor as T
from ivgan import wgan as W


def v(x):
    return A.Var(np.asarray(x, np.float64))


def test_task_spec_defaults():
    s = apps.TaskSpec()
    assert s.nu == 1000 and s.noise_p == 0.25
    assert apps.hole_size_for(64) == 20 and apps.hole_size_for(16) == 5
    with pytest.raises(ValueError):
        apps.TaskSpec(task="denoise")
    with pytest.raises(ValueError):
        apps.TaskSpec(noise_p=1.5)


def test_grayscale_examples():
    white, black = np.ones((1, 1, 3)), -np.ones((1, 1, 3))
    assert apps.to_grayscale(white).item() == pytest.approx(1.0)
    assert apps.to_grayscale(black).item() == pytest.approx(-1.0)
    red = np.array([1.0, -1.0, -1.0])  # (1, 0, 0) in [0, 1] space
    assert (apps.to_grayscale(red) + 1) / 2 == pytest.approx(0.299)


def test_gray_var_matches_array(rng):
    x = rng.uniform(-1, 1, (2, 3, 4, 4, 3))
    assert np.allclose(apps.gray_var(v(x)).value, apps.to_grayscale(x), atol=1e-12)


def test_salt_pepper():
    x = np.zeros((4, 50, 50, 3))
    assert np.array_equal(apps.salt_pepper(x, 0.0, 1), x)
    full = apps.salt_pepper(x, 1.0, 1)
    assert set(np.unique(full)) <= {-1.0, 1.0}
    assert np.all(full == full[..., :1])  # channels move together
    y = apps.salt_pepper(x, 0.25, 7)
    hit = (y[..., 0] != 0)
    n = hit.size
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert abs(hit.sum() - 0.25 * n) <= 3 * sigma
    assert np.array_equal(y, apps.salt_pepper(x, 0.25, 7))
    salt = (y[..., 0] == 1).sum() / hit.sum()
    assert abs(salt - 0.5) < 0.05


def test_cut_hole_center():
    x = np.ones((3, 64, 64, 3), np.float32)
    y, mask = apps.cut_hole(x, 20, "center")
    rows = np.where(mask[0].any(axis=1))[0]
    cols = np.where(mask[0].any(axis=0))[0]
    assert rows[0] == 22 and rows[-1] == 41 and cols[0] == 22 and cols[-1] == 41
    assert mask.sum() == 20 * 20 * 3
    assert np.all(y[mask > 0] == 0) and np.all(y[mask == 0] == 1)
    _, again = apps.cut_hole(x, 20, "center", seed=99)
    assert np.array_equal(mask, again)


def test_cut_hole_random():
    x = np.ones((2, 4, 16, 16, 3), np.float32)
    _, m1 = apps.cut_hole(x, 5, "random", seed=1)
    _, m2 = apps.cut_hole(x, 5, "random", seed=2)
    assert not np.array_equal(m1, m2)
    for m in m1:
        assert m.sum() == 25 * 4
        assert np.all(m == m[:1])  # fixed over time
    with pytest.raises(ValueError):
        apps.cut_hole(x, 17, "center")


def test_l2_loss(rng):
    a = rng.standard_normal((2, 3, 4))
    assert float(apps.l2_loss(v(a), v(a)).value) == 0.0
    assert float(apps.l2_loss(v(np.ones(5)), v(np.zeros(5))).value) == 1.0
    b = rng.standard_normal((2, 3, 4))
    total = 0.0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        total += (x - y) ** 2
    assert abs(float(apps.l2_loss(v(a), v(b)).value) - total / a.size) <= 1e-7
    with pytest.raises(T.ShapeError):
        apps.l2_loss(v(a), v(b[:1]))


def test_unsupervised_colorization_zero_for_gray_output(rng):
    real = rng.uniform(-1, 1, (2, 4, 4, 4, 3))
    y = apps.to_grayscale(real)
    fake = v(np.repeat(y, 3, axis=-1))
    spec = apps.TaskSpec(task="colorize_unsupervised")
    assert float(apps.reconstruction_loss(spec, fake, real, y).value) <= 1e-12


def test_unsupervised_colorization_hue_invariance(rng):
    real = rng.uniform(-1, 1, (2, 4, 4, 4, 3))
    y = apps.to_grayscale(real)
    fake = rng.uniform(-1, 1, real.shape)
    spec = apps.TaskSpec(task="colorize_unsupervised")
    base = float(apps.reconstruction_loss(spec, v(fake), real, y).value)
    # directions with zero luma: pure chroma changes
    basis = np.linalg.svd(apps.LUMA[None])[2][1:]
    for _ in range(10):
        coef = rng.standard_normal((2,) + real.shape[:-1])
        d = np.tensordot(np.moveaxis(coef, 0, -1), basis, axes=1)
        got = float(apps.reconstruction_loss(spec, v(fake + d), real, y).value)
        assert abs(got - base) <= 1e-6


def test_predict_loss_zero_when_first_frame_matches(rng):
    real = rng.uniform(-1, 1, (2, 4, 4, 4, 3))
    y = real[:, :1]
    fake = rng.uniform(-1, 1, real.shape)
    fake[:, 0] = real[:, 0]
    assert float(apps.future_loss(v(fake), y).value) == 0.0
    assert float(apps.future_loss(v(real[:, ::-1].copy()), y).value) > 0


def test_conditions():
    real = np.random.default_rng(0).uniform(-1, 1, (2, 8, 16, 16, 3)).astype(np.float32)
    assert apps.make_condition(apps.TaskSpec(task="colorize_supervised"), real, 0).shape[-1] == 1
    assert apps.make_condition(apps.TaskSpec(task="predict"), real, 0).shape[1] == 1
    hole = apps.make_condition(apps.TaskSpec(corruption="hole"), real, 0)
    assert (hole[0, :, 5:10, 5:10] == 0).all()
    pred = apps.TaskSpec(task="predict")
    assert apps.encoder_input(pred, real[:, :1], 8).shape == (2, 8, 16, 16, 3)
    with pytest.raises(T.ShapeError):
        apps.encoder_input(pred, real, 8)


def _nets(task, base=4):
    cfg = M.NetConfig.preset("desk", base_width=base)
    spec = apps.TaskSpec(task=task)
    return cfg, spec, M.build_generator(cfg, 1), apps.build_encoder_for(spec, cfg, 2), M.build_critic(cfg, 3)


@pytest.mark.parametrize("task", apps.TASKS)
def test_task_loss_gradients_reach_encoder_and_generator(task):
    cfg, spec, g, e, c = _nets(task)
    real = np.random.default_rng(1).uniform(-1, 1, (2,) + cfg.clip_shape).astype(np.float32)
    loss, diag = apps.task_loss(spec, g, e, c, real, seed=3)
    assert set(diag) == {"adversarial", "l_ap"}
    ge = A.grad(loss, list(e.params.values()))
    gg = A.grad(loss, list(g.params.values()))
    assert any(np.abs(x.value).sum() > 0 for x in ge)
    assert any(np.abs(x.value).sum() > 0 for x in gg)


def test_nu_zero_is_plain_generator_loss():
    cfg, spec, g, e, c = _nets("inpaint")
    spec = apps.TaskSpec(task="inpaint", nu=0.0)
    real = np.random.default_rng(2).uniform(-1, 1, (2,) + cfg.clip_shape).astype(np.float32)
    loss, diag = apps.task_loss(spec, g, e, c, real, seed=3)
    assert float(loss.value) == pytest.approx(diag["adversarial"])


def test_task_mismatch_rejected():
    cfg, spec, g, e, c = _nets("colorize_supervised")
    rgb = np.zeros((2,) + cfg.clip_shape, np.float32)
    with pytest.raises(T.ShapeError):
        apps.reconstruct(apps.TaskSpec(task="inpaint"), g, e, rgb)


def test_task_trainer_updates_encoder():
    cfg = W.TrainConfig(batch_size=2, seed=0, scale="desk")
    net = M.NetConfig.preset("desk", base_width=4)
    ds = D.SynthDataset(D.SynthSpec(seed=1), 2)
    tr = apps.TaskTrainer(cfg, net, apps.TaskSpec(task="predict"), D.batcher(ds, 2, 0))
    before = tr.encoder.params.arrays()
    before = {k: a.copy() for k, a in before.items()}
    rep = tr.train_step()
    assert "l_ap" in rep.extra and rep.finite()
    assert tr.opt["encoder"].t == 1 and tr.opt["critic"].t == 5
    assert any(not np.array_equal(before[k], a) for k, a in tr.encoder.params.arrays().items())
    state = tr.state_arrays()
    assert state["meta/encoder_channels"][0] == 3
    assert any(k.startswith("encoder/") for k in state)


def test_inpaint_overfit_decreases():
    # two clips, moving average of L_AP over the first steps strictly falls
    cfg = W.TrainConfig(batch_size=2, seed=4, scale="desk")
    net = M.NetConfig.preset("desk", base_width=8)
    ds = D.SynthDataset(D.SynthSpec(seed=5), 2)
    tr = apps.TaskTrainer(cfg, net, apps.TaskSpec(task="inpaint"), D.batcher(ds, 2, 0))
    lap = [tr.train_step().extra["l_ap"] for _ in range(24)]
    k = 4
    avg = np.convolve(lap, np.ones(k) / k, mode="valid")[::k]
    assert np.all(np.diff(avg) < 0), avg
