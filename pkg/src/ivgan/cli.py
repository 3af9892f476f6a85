"""Command-line entry points.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error
(bad arguments or an invalid config file).
"""

import argparse
from collections import OrderedDict
import json
import os
import sys
import warnings

import numpy as np

from . import apps
from . import autograd as A
from . import data as D
from . import evalcli
from . import gradcheck
from . import io
from . import models
from . import tensor as T
from . import wgan

TASK_NAMES = OrderedDict([
    ("colorize-sup", "colorize_supervised"),
    ("colorize-unsup", "colorize_unsupervised"),
    ("inpaint", "inpaint"),
    ("predict", "predict"),
])


# corpora up to this many clips are kept in memory
CACHE_CLIPS = 1024


class UsageError(Exception):
    pass


def _dataset(run):
    n = run.net
    spec = D.SynthSpec(preset=run.data.preset, frames=n.frames, height=n.height, width=n.width,
                       seed=run.data.seed)
    return D.SynthDataset(spec, run.data.size, cache=run.data.size <= CACHE_CLIPS)


def _load_config(path):
    try:
        return evalcli.config_load(path) if path else evalcli.resolve({})
    except evalcli.ConfigError as e:
        raise UsageError(str(e)) from None


def _progress(quiet):
    def show(rep):
        if not quiet:
            print(f"step {rep.step}: W {rep.wasserstein:.4f} GP {rep.penalty:.4f} "
                  f"G {rep.generator_loss:.4f}" + "".join(f" {k} {v:.5f}" for k, v in rep.extra.items()),
                  flush=True)
    return show


def cmd_train(args):
    run = _load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    evalcli.write_resolved(run, args.out)
    batches = D.batcher(_dataset(run), run.train.batch_size, T.derive_seed(run.train.seed, 1))
    trainer = wgan.WGANTrainer(run.train, run.net, batches)
    wgan.run(trainer, run.train.total_steps, args.out, run.train.checkpoint_every,
             on_report=_progress(args.quiet))
    return 0


def cmd_task_train(args):
    run = _load_config(args.config)
    task = apps.TaskSpec(**dict(run.task.to_dict(), task=TASK_NAMES[args.task]))
    run = evalcli.RunConfig(run.train, run.net, task, run.data)
    os.makedirs(args.out, exist_ok=True)
    evalcli.write_resolved(run, args.out)
    batches = D.batcher(_dataset(run), run.train.batch_size, T.derive_seed(run.train.seed, 1))
    trainer = apps.TaskTrainer(run.train, run.net, task, batches)
    wgan.run(trainer, run.train.total_steps, args.out, run.train.checkpoint_every,
             on_report=_progress(args.quiet))
    return 0


def _load_nets(path, with_encoder=False):
    arrays = io.load_checkpoint(path)
    if "meta/netcfg" not in arrays:
        raise io.FormatError(f"{path} has no network metadata")
    cfg = wgan.net_config_from_checkpoint(arrays)
    gen = models.build_generator(cfg)
    gen.params.load_arrays(arrays)
    gen.load_buffers(arrays)
    if not with_encoder:
        return cfg, gen, None
    if "meta/encoder_channels" not in arrays:
        raise io.FormatError(f"{path} is not a task checkpoint (no encoder)")
    enc = models.build_encoder(cfg, in_channels=int(arrays["meta/encoder_channels"][0]))
    enc.params.load_arrays(arrays)
    enc.load_buffers(arrays)
    return cfg, gen, enc


def _write_clip(out_dir, name, clip, frames):
    io.write_clip(os.path.join(out_dir, f"{name}.ivc"), clip)
    if frames:
        io.export_frames(clip, os.path.join(out_dir, name))


def cmd_generate(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    cfg, gen, _ = _load_nets(args.ckpt)
    z = T.rng_fill("normal", (args.n, cfg.z_dim), args.seed)
    with A.no_grad():
        clips = gen(A.Var(z), training=False).value
    os.makedirs(args.out, exist_ok=True)
    for i, clip in enumerate(clips):
        _write_clip(args.out, f"sample_{i:04d}", clip, args.frames)
    return 0


def cmd_apply(args):
    task = apps.TaskSpec(task=TASK_NAMES[args.task])
    cfg, gen, enc = _load_nets(args.ckpt, with_encoder=True)
    clip = io.read_clip(args.input)
    if args.from_clean:
        y = apps.make_condition(task, clip[None], args.seed)
    else:
        y = clip[None]
        if task.task.startswith("colorize") and y.shape[-1] == 3:
            y = apps.to_grayscale(y)
        if task.task == "predict":
            y = y[:, :1]
    with A.no_grad():
        out = apps.reconstruct(task, gen, enc, y, training=False).value[0]
    os.makedirs(args.out, exist_ok=True)
    _write_clip(args.out, "condition", y[0] if task.task != "predict" else np.repeat(y[0], cfg.frames, 0),
                args.frames)
    _write_clip(args.out, "output", out, args.frames)
    return 0


def cmd_eval(args):
    a, b = io.read_clip(args.a), io.read_clip(args.b)
    print(f"{evalcli.psnr(a, b, args.space):.4f}")
    return 0


def cmd_data_synth(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    spec = D.SynthSpec(preset=args.preset, frames=args.frames_count, height=args.size,
                       width=args.size, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n):
        io.write_clip(os.path.join(args.out, f"clip_{i:04d}.ivc"), D.synth_clip(spec, i))
    return 0


def cmd_gradcheck(args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.UnreachableGradWarning)
        results = gradcheck.run_suite(args.seed, report=None if args.quiet else lambda r: print(r.line()))
    bad = [r.name for r in results if not r.passed]
    print(json.dumps(dict(cases=len(results), failed=bad)))
    return 1 if bad else 0


def build_parser():
    p = argparse.ArgumentParser(prog="ivgan", description="One-stream video WGAN-GP toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="unconditional WGAN-GP training")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("task-train", help="encoder + generator training for one task")
    s.add_argument("--task", required=True, choices=list(TASK_NAMES))
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_task_train)

    s = sub.add_parser("generate", help="sample clips from a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", action="store_true", help="also export PPM frames")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("apply", help="run encoder + generator on a clip")
    s.add_argument("--task", required=True, choices=list(TASK_NAMES))
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--from-clean", action="store_true",
                   help="treat the input as ground truth and build the condition from it")
    s.add_argument("--seed", type=int, default=0, help="corruption seed with --from-clean")
    s.add_argument("--frames", action="store_true", help="also export PPM frames")
    s.set_defaults(fn=cmd_apply)

    s = sub.add_parser("eval", help="metrics")
    esub = s.add_subparsers(dest="metric", required=True)
    e = esub.add_parser("psnr")
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.add_argument("--space", choices=("gray", "rgb"), default="gray")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("data-synth", help="write synthetic clips")
    s.add_argument("--preset", required=True, choices=D.PRESETS)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--frames-count", type=int, default=8, help="frames per clip")
    s.add_argument("--size", type=int, default=16, help="frame height and width")
    s.set_defaults(fn=cmd_data_synth)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks (float64)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"ivgan: usage error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, FloatingPointError, KeyError) as e:
        print(f"ivgan: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
