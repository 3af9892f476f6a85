import json
import math
import os

import numpy as np
import pytest

from ivgan import autograd as A
from ivgan import data as D
from ivgan import gradcheck as G
from ivgan import io
from ivgan import layers as L
from ivgan import models as M
from ivgan import wgan as W


def linear_critic(w):
    w = np.asarray(w, np.float64)

    def critic(x):
        n = x.shape[0]
        flat = A.reshape(x, (n, w.size))
        return A.reshape(A.matmul(flat, A.as_var(w.reshape(-1, 1), flat)), (n,))
    return critic


def const_critic(c):
    return lambda x: A.add(A.mul(A.sum_(x, tuple(range(1, x.ndim))), 0.0), c)


def v(x):
    return A.Var(np.asarray(x, np.float64))


def test_value_examples(rng):
    real, fake = v(rng.standard_normal((3, 4))), v(rng.standard_normal((3, 4)))
    assert float(W.wgan_value(const_critic(2.5), real, fake).value) == 0.0
    w = rng.standard_normal(4)
    val = W.wgan_value(linear_critic(w), v(np.ones((3, 4))), v(np.zeros((3, 4))))
    assert float(val.value) == pytest.approx(w.sum())
    c = linear_critic(w)
    assert float(W.wgan_value(c, real, fake).value) == pytest.approx(-float(W.wgan_value(c, fake, real).value))


def test_interpolate_endpoints():
    real, fake = np.full((2, 3), 2.0), np.zeros((2, 3))
    assert np.array_equal(W.interpolate(real, fake, eps=1.0), real)
    assert np.array_equal(W.interpolate(real, fake, eps=0.0), fake)
    assert np.allclose(W.interpolate(real, fake, eps=0.25), 0.5)


def test_interpolate_per_sample(rng):
    real, fake = np.ones((5, 2, 2)), np.zeros((5, 2, 2))
    x = W.interpolate(real, fake, seed=3)
    eps = x.reshape(5, -1)
    assert np.all(eps == eps[:, :1])  # one scalar per sample
    assert len(set(eps[:, 0])) == 5
    assert np.all((eps >= 0) & (eps < 1))


def test_penalty_linear_critic(rng):
    for _ in range(5):
        w = rng.standard_normal(6) * rng.uniform(0.1, 3)
        xhat = v(rng.standard_normal((4, 6)) * 10)
        gp = float(W.gradient_penalty(linear_critic(w), xhat).value)
        assert abs(gp - (np.linalg.norm(w) - 1) ** 2) <= 1e-6


def test_penalty_sum_and_identity():
    d = 9
    sumc = lambda x: A.sum_(x, (1,))
    assert float(W.gradient_penalty(sumc, v(np.zeros((2, d)))).value) == pytest.approx((math.sqrt(d) - 1) ** 2)
    ident = lambda x: A.reshape(x, (x.shape[0],))
    assert float(W.gradient_penalty(ident, v(np.ones((3, 1)))).value) == 0.0


def test_penalty_nonnegative(rng):
    params = G.dense_critic_params(seed=2)
    critic = lambda x: G.dense_critic(x, *[v(p) for p in params])
    for _ in range(5):
        gp = W.gradient_penalty(critic, v(rng.standard_normal((3, 4))))
        assert float(gp.value) >= 0


def test_critic_loss_lambda_zero(rng):
    cfg = M.NetConfig.preset("desk", base_width=2)
    gen, crit = M.build_generator(cfg, 1), M.build_critic(cfg, 2)
    real = rng.uniform(-1, 1, (2,) + cfg.clip_shape).astype(np.float32)
    z = rng.standard_normal((2, 100)).astype(np.float32)
    loss = W.critic_loss(crit, gen, real, z, lam=0.0, seed=1)
    with A.no_grad():
        fake = gen(A.Var(z))
        value = W.wgan_value(crit, A.Var(real), fake)
    assert float(loss.value) == pytest.approx(-float(value.value), rel=1e-5, abs=1e-6)


def test_unit_norm_linear_critic_penalty_vanishes(rng):
    w = rng.standard_normal(4)
    w /= np.linalg.norm(w)
    real, fake = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    for lam in (0.0, 10.0, 1e4):
        t = W.critic_terms(linear_critic(w), real, fake, lam, seed=0)
        assert float(t.loss.value) == pytest.approx(-float(t.wasserstein.value), abs=1e-9)


def test_generator_loss_sign():
    gen = lambda z: z
    z = v(np.ones((2, 3)))
    low = W.generator_loss(linear_critic(np.full(3, 1.0)), gen, z)
    high = W.generator_loss(linear_critic(np.full(3, 2.0)), gen, z)
    assert float(high.value) < float(low.value)


def test_critic_loss_dense_fd():
    # full critic-loss gradient (value + penalty) vs finite differences
    rng = np.random.default_rng(5)
    real, fake = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))

    def fn(w1, b1, w2, b2):
        critic = lambda x: G.dense_critic(x, w1, b1, w2, b2)
        return W.critic_terms(critic, real, fake, 10.0, seed=4).loss

    res = G.check("critic loss", fn, G.dense_critic_params(seed=3), rtol=1e-3)
    assert res.passed, res.line()


def test_batch_norm_critic_breaks_independence(rng):
    # a batch-statistics critic couples samples: its per-sample input gradient
    # depends on the rest of the batch, which is why such critics are refused
    x = rng.standard_normal((3, 4))

    def bn_critic(x):
        h = L.batch_norm(x)
        return A.sum_(A.tanh(h), (1,))

    def grad0(batch):
        xv = A.Var(batch, requires_grad=True)
        return A.grad(A.sum_(bn_critic(xv)), xv).value[0]

    x2 = x.copy()
    x2[1:] += 5 * rng.standard_normal((2, 4))
    assert not np.allclose(grad0(x), grad0(x2))

    def ln_critic(x):
        return A.sum_(A.tanh(L.layer_norm(x)), (1,))

    def lgrad0(batch):
        xv = A.Var(batch, requires_grad=True)
        return A.grad(A.sum_(ln_critic(xv)), xv).value[0]

    assert np.allclose(lgrad0(x), lgrad0(x2))
    with pytest.raises(ValueError):
        M.Critic(M.NetConfig.preset("desk"), norm="batch")


def _tiny(seed=0, batch=4, **kw):
    cfg = W.TrainConfig(batch_size=batch, seed=seed, scale="desk", **kw)
    net = M.NetConfig.preset("desk", base_width=4)
    ds = D.SynthDataset(D.SynthSpec(seed=seed), 8)
    return cfg, net, D.batcher(ds, batch, seed)


def test_one_step_counts():
    cfg, net, data = _tiny()
    tr = W.WGANTrainer(cfg, net, data)
    rep = tr.train_step()
    assert tr.opt["critic"].t == 5
    assert tr.opt["generator"].t == 1
    assert rep.step == 1 and rep.finite()


def test_alpha_zero_keeps_params():
    cfg, net, data = _tiny(alpha=0.0)
    tr = W.WGANTrainer(cfg, net, data)
    before = {k: a.copy() for n in tr.nets().values() for k, a in n.params.arrays().items()}
    for _ in range(2):
        tr.train_step()
    after = {k: a for n in tr.nets().values() for k, a in n.params.arrays().items()}
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_lr_halving():
    cfg, net, data = _tiny(lr_halve_at=(2,))
    tr = W.WGANTrainer(cfg, net, data)
    tr.train_step()
    assert tr.opt["critic"].alpha == pytest.approx(2e-4)
    tr.train_step()
    assert tr.opt["critic"].alpha == pytest.approx(1e-4)
    assert tr.opt["generator"].alpha == pytest.approx(1e-4)


def test_smoke_run_writes_metrics(tmp_path):
    cfg, net, data = _tiny(seed=1)
    tr = W.WGANTrainer(cfg, net, data)
    reports, ckpts = W.run(tr, 50, str(tmp_path), checkpoint_every=25)
    assert all(r.finite() for r in reports)
    assert all(r.penalty > 0 for r in reports)
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 50 and json.loads(lines[-1])["step"] == 50
    assert [os.path.basename(p) for p in ckpts] == ["ckpt_000025.ivgc", "ckpt_000050.ivgc"]


def test_resume_matches_uninterrupted(tmp_path):
    cfg, net, data = _tiny(seed=2)
    a = W.WGANTrainer(cfg, net, data)
    for _ in range(3):
        a.train_step()
    state = io.decode_checkpoint(io.encode_checkpoint(a.state_arrays()))
    cfg2, net2, _ = _tiny(seed=2)
    b = W.WGANTrainer(cfg2, net2, iter([]))
    b.load_state(state)
    assert b.step == 3
    assert io.encode_checkpoint(b.state_arrays()) == io.encode_checkpoint(a.state_arrays())
    assert W.net_config_from_checkpoint(state).base_width == 4


def test_non_finite_aborts(tmp_path):
    cfg, net, _ = _tiny()
    bad = iter([np.full((4,) + net.clip_shape, np.nan, np.float32)] * 10)
    tr = W.WGANTrainer(cfg, net, bad)
    with pytest.raises(W.TrainingAborted) as exc:
        W.run(tr, 1, str(tmp_path))
    assert exc.value.step == 1
    dump = json.loads((tmp_path / "abort.json").read_text())
    assert dump["step"] == 1 and dump["seed"] is not None


def test_step_report_json():
    r = W.StepReport(1, 0.5, 0.1, -0.4, 0.2, 1.0, 2.0, 0.01, {"l_ap": 0.3})
    d = json.loads(r.to_json())
    assert d["l_ap"] == 0.3 and d["wasserstein"] == 0.5
    assert not W.StepReport(1, float("nan"), 0, 0, 0, 0, 0, 0).finite()
