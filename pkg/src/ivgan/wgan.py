"""WGAN-GP objective and the alternating critic/generator schedule."""

from collections import OrderedDict
from dataclasses import dataclass, asdict, field
import json
import math
import os
import time

import numpy as np

from . import autograd as A
from . import io
from . import layers as L
from . import models
from . import tensor as T


@dataclass
class TrainConfig:
    lam: float = 10.0
    critic_ratio: int = 5
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.99
    batch_size: int = 64
    total_steps: int = 2000
    lr_halve_at: tuple = ()
    seed: int = 0
    scale: str = "full"
    checkpoint_every: int = 0  # 0: only the final checkpoint


@dataclass
class StepReport:
    step: int
    wasserstein: float
    penalty: float
    critic_loss: float
    generator_loss: float
    critic_grad_norm: float
    generator_grad_norm: float
    wall_time: float
    extra: dict = field(default_factory=dict)

    def finite(self):
        vals = [self.wasserstein, self.penalty, self.critic_loss, self.generator_loss,
                self.critic_grad_norm, self.generator_grad_norm, *self.extra.values()]
        return all(math.isfinite(v) for v in vals)

    def to_json(self):
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return json.dumps(d, sort_keys=True)


class TrainingAborted(RuntimeError):
    def __init__(self, msg, step=None, seed=None):
        super().__init__(msg)
        self.step = step
        self.seed = seed


# ---------------------------------------------------------------------------
# objective

def wgan_value(critic, real, fake):
    """E[C(real)] - E[C(fake)] as a scalar Var."""
    if real.shape[0] != fake.shape[0]:
        raise T.ShapeError(f"real batch {real.shape[0]} vs fake batch {fake.shape[0]}")
    return A.sub(A.mean(critic(real)), A.mean(critic(fake)))


def interpolate(real, fake, seed=None, eps=None):
    """Per-sample random points on the segments between real and fake clips.

    ``eps`` (one value per sample) overrides the draw from ``seed``.
    """
    real, fake = np.asarray(real), np.asarray(fake)
    if real.shape != fake.shape:
        raise T.ShapeError(f"interpolate: shape mismatch {real.shape} vs {fake.shape}")
    n = real.shape[0]
    if eps is None:
        eps = T.rng_fill("uniform", (n,), seed, dtype=np.float64)
    eps = np.broadcast_to(np.asarray(eps, np.float64), (n,)).reshape((n,) + (1,) * (real.ndim - 1))
    return (eps * real + (1.0 - eps) * fake).astype(real.dtype)


def gradient_penalty(critic, xhat):
    """E[(||dC/dxhat_i||_2 - 1)^2] with a per-sample flattened norm.

    The result stays differentiable with respect to the critic parameters
    unless gradients are disabled by the caller; the inner input gradient
    is computed either way.
    """
    if not isinstance(xhat, A.Var) or not xhat.requires_grad:
        xhat = A.Var(np.asarray(getattr(xhat, "value", xhat)), requires_grad=True)
    outer = A.is_grad_enabled()
    with A.set_grad_enabled(True):
        out = critic(xhat)
        g = A.grad(A.sum_(out), xhat, create_graph=outer)
    norms = A.per_sample_norm(g)
    return A.mean(A.square(A.add(norms, -1.0)))


@dataclass
class CriticTerms:
    loss: A.Var
    wasserstein: A.Var
    penalty: A.Var


def critic_terms(critic, real, fake, lam, seed=None, eps=None):
    real = np.asarray(getattr(real, "value", real))
    fake = np.asarray(getattr(fake, "value", fake))
    n = real.shape[0]
    # layer norm keeps samples independent, so one pass over both halves is exact
    both = critic(A.Var(np.concatenate([real, fake], axis=0)))
    w = A.sub(A.mean(both[0:n]), A.mean(both[n:2 * n]))
    xhat = A.Var(interpolate(real, fake, seed, eps), requires_grad=True)
    gp = gradient_penalty(critic, xhat)
    loss = A.neg(w) if lam == 0 else A.add(A.neg(w), A.mul(gp, float(lam)))
    return CriticTerms(loss, w, gp)


def critic_loss(critic, generator, real, z, lam, seed=None, eps=None):
    """-(E[C(x)] - E[C(G(z))]) + lam * penalty, minimized by the critic."""
    with A.no_grad():
        fake = generator(_as_var(z)).value
    return critic_terms(critic, real, fake, lam, seed, eps).loss


def generator_loss(critic, generator, z):
    """-E[C(G(z))]."""
    return A.neg(A.mean(critic(generator(_as_var(z)))))


def _as_var(x):
    return x if isinstance(x, A.Var) else A.Var(np.asarray(x))


def global_norm(grads):
    return float(math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))


def _grads(loss, params):
    names = list(params)
    gs = A.grad(loss, [params[k] for k in names])
    return OrderedDict((k, g.value) for k, g in zip(names, gs))


def _check(value, what, step, seed):
    if not math.isfinite(value):
        raise TrainingAborted(f"non-finite {what} at step {step} (batch seed {seed})", step, seed)


# ---------------------------------------------------------------------------
# training

class WGANTrainer:
    """Unconditional training: ``critic_ratio`` critic updates per generator update."""

    def __init__(self, cfg, net_cfg, data, generator=None, critic=None):
        self.cfg = cfg
        self.net_cfg = net_cfg
        self.data = iter(data)
        self.generator = generator or models.build_generator(net_cfg, T.derive_seed(cfg.seed, 10))
        self.critic = critic or models.build_critic(net_cfg, T.derive_seed(cfg.seed, 11))
        self.opt = OrderedDict(
            generator=self._adam(),
            critic=self._adam(),
        )
        self.step = 0

    def _adam(self):
        c = self.cfg
        return L.AdamState(alpha=c.alpha, beta1=c.beta1, beta2=c.beta2)

    # hooks overridden by conditional trainers --------------------------------

    def generator_side(self):
        """Networks updated on the generator step (name -> Net)."""
        return OrderedDict(generator=self.generator)

    def make_fake(self, real, seed):
        z = T.rng_fill("normal", (real.shape[0], self.net_cfg.z_dim), seed)
        return self.generator(A.Var(z))

    def generator_objective(self, real, seed):
        fake = self.make_fake(real, seed)
        loss = A.neg(A.mean(self.critic(fake)))
        return loss, {}

    # ------------------------------------------------------------------------

    def _next_real(self):
        batch = np.asarray(next(self.data), dtype=np.float32)
        if batch.shape[0] < 2:
            raise ValueError("training batches need at least 2 clips")
        return batch

    def _maybe_halve(self):
        if self.step in tuple(self.cfg.lr_halve_at):
            for st in self.opt.values():
                st.alpha /= 2.0

    def train_step(self):
        cfg = self.cfg
        t0 = time.perf_counter()
        self.step += 1
        s = self.step
        self._maybe_halve()
        for k in range(cfg.critic_ratio):
            seed = T.derive_seed(cfg.seed, s, k)
            real = self._next_real()
            with A.no_grad():
                fake = self.make_fake(real, T.derive_seed(seed, 1)).value
            terms = critic_terms(self.critic, real, fake, cfg.lam, T.derive_seed(seed, 2))
            _check(float(terms.loss.value), "critic loss", s, seed)
            cg = _grads(terms.loss, self.critic.params)
            c_norm = global_norm(cg)
            _check(c_norm, "critic gradient", s, seed)
            L.adam_step(self.critic.params, cg, self.opt["critic"])

        seed = T.derive_seed(cfg.seed, s, cfg.critic_ratio)
        real = self._next_real()
        loss, extra = self.generator_objective(real, T.derive_seed(seed, 1))
        _check(float(loss.value), "generator loss", s, seed)
        g_norm = 0.0
        for name, net in self.generator_side().items():
            gg = _grads(loss, net.params)
            n = global_norm(gg)
            _check(n, f"{name} gradient", s, seed)
            g_norm = math.hypot(g_norm, n)
            L.adam_step(net.params, gg, self.opt[name])

        report = StepReport(
            step=s,
            wasserstein=float(terms.wasserstein.value),
            penalty=float(terms.penalty.value),
            critic_loss=float(terms.loss.value),
            generator_loss=float(loss.value),
            critic_grad_norm=c_norm,
            generator_grad_norm=g_norm,
            wall_time=time.perf_counter() - t0,
            extra={k: float(v) for k, v in extra.items()},
        )
        if not report.finite():
            raise TrainingAborted(f"non-finite step report at step {s}", s, seed)
        return report

    # checkpoint state ----------------------------------------------------------

    def nets(self):
        out = OrderedDict(self.generator_side())
        out["critic"] = self.critic
        return out

    def state_arrays(self):
        out = OrderedDict()
        cfg = self.net_cfg
        out["meta/netcfg"] = np.array([cfg.z_dim, cfg.frames, cfg.height, cfg.width, cfg.channels,
                                       cfg.base_width, cfg.depth], np.float32)
        out["meta/step"] = np.array([self.step], np.float32)
        for name, net in self.nets().items():
            out.update(net.params.arrays())
            out.update(net.buffers())
            st = self.opt[name]
            out[f"adam/{name}/t"] = np.array([st.t], np.float32)
            out[f"adam/{name}/alpha"] = np.array([st.alpha], np.float32)
            for k in net.params:
                if k in st.m:
                    out[f"adam/{k}/m"] = st.m[k]
                    out[f"adam/{k}/v"] = st.v[k]
        return out

    def load_state(self, arrays):
        self.step = int(arrays["meta/step"][0])
        for name, net in self.nets().items():
            net.params.load_arrays(arrays)
            net.load_buffers(arrays)
            st = self.opt[name]
            st.t = int(arrays[f"adam/{name}/t"][0])
            st.alpha = float(arrays[f"adam/{name}/alpha"][0])
            for k in net.params:
                if f"adam/{k}/m" in arrays:
                    st.m[k] = np.array(arrays[f"adam/{k}/m"])
                    st.v[k] = np.array(arrays[f"adam/{k}/v"])


def net_config_from_checkpoint(arrays, scale="custom"):
    z, t, h, w, c, b, d = (int(v) for v in arrays["meta/netcfg"])
    return models.NetConfig(scale=scale, z_dim=z, frames=t, height=h, width=w,
                            channels=c, base_width=b, depth=d)


def run(trainer, steps, out_dir=None, checkpoint_every=0, metrics_name="metrics.jsonl", on_report=None):
    """Drive ``trainer`` for ``steps`` outer steps.

    Reports are streamed as JSON lines to ``out_dir/metrics.jsonl`` when an
    output directory is given, and checkpoints are written every
    ``checkpoint_every`` steps plus once at the end. Returns ``(reports,
    checkpoint paths)``.
    """
    reports, ckpts = [], []
    metrics = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics = open(os.path.join(out_dir, metrics_name), "w")
    try:
        for _ in range(steps):
            try:
                rep = trainer.train_step()
            except (TrainingAborted, FloatingPointError) as e:
                if out_dir is not None:
                    dump = dict(error=str(e), step=trainer.step, seed=getattr(e, "seed", None),
                                run_seed=trainer.cfg.seed)
                    io.atomic_write(os.path.join(out_dir, "abort.json"), json.dumps(dump).encode())
                raise
            reports.append(rep)
            if metrics is not None:
                metrics.write(rep.to_json() + "\n")
                metrics.flush()
            if on_report is not None:
                on_report(rep)
            if out_dir is not None and checkpoint_every and trainer.step % checkpoint_every == 0:
                path = os.path.join(out_dir, f"ckpt_{trainer.step:06d}.ivgc")
                io.save_checkpoint(path, trainer.state_arrays())
                ckpts.append(path)
        if out_dir is not None and (not ckpts or not ckpts[-1].endswith(f"{trainer.step:06d}.ivgc")):
            path = os.path.join(out_dir, f"ckpt_{trainer.step:06d}.ivgc")
            io.save_checkpoint(path, trainer.state_arrays())
            ckpts.append(path)
    finally:
        if metrics is not None:
            metrics.close()
    return reports, ckpts


def train_loop(cfg, net_cfg, data, out_dir=None, on_report=None):
    """Unconditional WGAN-GP training for ``cfg.total_steps`` outer steps."""
    trainer = WGANTrainer(cfg, net_cfg, data)
    reports, ckpts = run(trainer, cfg.total_steps, out_dir, cfg.checkpoint_every, on_report=on_report)
    return trainer, reports, ckpts
