import json
import os
import struct
import zlib
from collections import OrderedDict

import numpy as np
import pytest

from ivgan import cli
from ivgan import evalcli as E
from ivgan import io


def _tensors(rng):
    return OrderedDict([
        ("a/w", rng.standard_normal((2, 3, 4)).astype(np.float32)),
        ("scalar", np.array(3.5, np.float32)),
        ("ünï", rng.standard_normal(5).astype(np.float32)),
        ("special", np.array([np.inf, -0.0, np.nan, 1e-42], np.float32)),
    ])


def test_checkpoint_round_trip(tmp_path, rng):
    t = _tensors(rng)
    p = tmp_path / "c.ivgc"
    io.save_checkpoint(p, t)
    back = io.load_checkpoint(p)
    assert list(back) == list(t)
    for k in t:
        assert back[k].shape == t[k].shape and back[k].tobytes() == t[k].tobytes()
    p2 = tmp_path / "d.ivgc"
    io.save_checkpoint(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_checkpoint_layout(rng):
    data = io.encode_checkpoint(OrderedDict(x=np.array([1.0, 2.0], np.float32)))
    assert data[:4] == b"IVGC"
    assert struct.unpack_from("<II", data, 4) == (1, 1)
    assert struct.unpack_from("<I", data, 12) == (1,) and data[16:17] == b"x"
    assert struct.unpack_from("<II", data, 17) == (1, 2)
    assert data[25] == 0
    assert np.frombuffer(data[26:34], "<f4").tolist() == [1.0, 2.0]
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_checkpoint_corruption_detected(rng):
    data = bytearray(io.encode_checkpoint(_tensors(rng)))
    data[30] ^= 1
    with pytest.raises(io.FormatError, match="CRC"):
        io.decode_checkpoint(bytes(data))
    with pytest.raises(io.FormatError):
        io.decode_checkpoint(b"NOPE" + bytes(20))
    with pytest.raises(io.FormatError):
        io.encode_checkpoint({"x": np.zeros(2, np.float64)})


def test_clip_round_trip(tmp_path, rng):
    clip = rng.uniform(-1, 1, (3, 4, 5, 3)).astype(np.float32)
    p = tmp_path / "a.ivc"
    io.write_clip(p, clip)
    raw = p.read_bytes()
    assert raw[:4] == b"IVCL" and struct.unpack_from("<5I", raw, 4) == (1, 3, 4, 5, 3)
    assert io.read_clip(p).tobytes() == clip.tobytes()
    with pytest.raises(io.FormatError, match="payload"):
        io.decode_clip(raw[:-4])


def test_export_frames(tmp_path):
    clip = np.full((3, 2, 4, 3), -1.0, np.float32)
    paths = io.export_frames(clip, tmp_path / "f")
    assert [os.path.basename(p) for p in paths] == ["frame_0000.ppm", "frame_0001.ppm", "frame_0002.ppm"]
    body = open(paths[0], "rb").read()
    head = b"P6\n4 2\n255\n"
    assert body.startswith(head) and body[len(head):] == bytes(2 * 4 * 3)
    gray = np.zeros((1, 1, 1, 1), np.float32)
    p = io.export_frames(gray, tmp_path / "g")[0]
    assert open(p, "rb").read()[-3:] == bytes([128, 128, 128])


def test_to_bytes_mapping():
    assert io.to_bytes(np.array([-1.0, 0.0, 1.0])).tolist() == [0, 128, 255]


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        io.export_frames(np.zeros((1, 2, 2, 3)), blocker / "sub")


# ---------------------------------------------------------------------------
# psnr

def test_psnr_examples(rng):
    a = rng.uniform(-1, 1, (2, 4, 4, 3))
    assert E.psnr(a, a) == E.PSNR_CAP
    # MSE 0.01 in [0, 1] space: offset of 0.1 there is 0.2 in [-1, 1]
    g = np.zeros((1, 4, 4, 1))
    assert E.psnr(g, g + 0.2, "gray") == pytest.approx(20.0)
    assert E.psnr(g, g + 0.02, "gray") == pytest.approx(40.0)
    b = rng.uniform(-1, 1, a.shape)
    assert E.psnr(a, b) == E.psnr(b, a)
    assert E.psnr(a, b, "rgb") == E.psnr(b, a, "rgb")
    with pytest.raises(ValueError):
        E.psnr(a, b[:1])


# ---------------------------------------------------------------------------
# config

def test_config_defaults():
    run = E.resolve({})
    t = run.train
    assert (t.lam, t.alpha, t.beta1, t.beta2, t.critic_ratio, t.batch_size) == (10, 2e-4, 0.5, 0.99, 5, 64)
    assert run.task.nu == 1000
    assert run.net.frames == 32 and run.net.height == 64 and run.net.z_dim == 100


@pytest.mark.parametrize("obj,key", [
    ({"lambda": -1}, "lambda"),
    ({"lamda": 1}, "lamda"),
    ({"batch_size": 2.5}, "batch_size"),
    ({"alpha": "fast"}, "alpha"),
    ({"seed": True}, "seed"),
    ({"beta2": 1.0}, "beta2"),
    ({"scale": "huge"}, "scale"),
    ({"lr_halve_at": [0]}, "lr_halve_at"),
])
def test_config_rejections(obj, key):
    with pytest.raises(E.ConfigError, match=key):
        E.resolve(obj)


def test_config_round_trip(tmp_path):
    run = E.resolve({"scale": "desk", "batch_size": 16, "lr_halve_at": [100, 200], "nu": 10})
    assert run.net.frames == 8 and run.train.lr_halve_at == (100, 200)
    p1 = E.write_resolved(run, tmp_path / "a")
    again = E.config_load(p1)
    assert again == run
    p2 = E.write_resolved(again, tmp_path / "b")
    assert open(p1).read() == open(p2).read()


def test_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(E.ConfigError):
        E.config_load(p)


# ---------------------------------------------------------------------------
# command line

def test_cli_usage_errors(capsys):
    assert cli.main([]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["eval", "psnr", "--a", "x"]) == 2


def test_cli_data_and_eval(tmp_path, capsys):
    out = tmp_path / "clips"
    assert cli.main(["data-synth", "--preset", "moving_squares_static_bg", "--n", "2",
                     "--seed", "1", "--out", str(out)]) == 0
    a = str(out / "clip_0000.ivc")
    capsys.readouterr()
    assert cli.main(["eval", "psnr", "--a", a, "--b", a, "--space", "gray"]) == 0
    assert float(capsys.readouterr().out) == 99.0
    assert cli.main(["eval", "psnr", "--a", a, "--b", str(tmp_path / "missing.ivc")]) == 1


def test_cli_train_generate_apply(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scale": "desk", "batch_size": 2, "data_size": 4, "total_steps": 1,
                               "base_width": 4, "critic_ratio": 1}))
    run = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(run), "--quiet"]) == 0
    assert json.loads((run / "resolved_config.json").read_text())["batch_size"] == 2
    ck = str(run / "ckpt_000001.ivgc")
    for d in ("g1", "g2"):
        assert cli.main(["generate", "--ckpt", ck, "--n", "2", "--seed", "7", "--out", str(tmp_path / d)]) == 0
    for name in ("sample_0000.ivc", "sample_0001.ivc"):
        assert (tmp_path / "g1" / name).read_bytes() == (tmp_path / "g2" / name).read_bytes()

    trun = tmp_path / "trun"
    assert cli.main(["task-train", "--task", "colorize-sup", "--config", str(cfg), "--out", str(trun),
                     "--quiet"]) == 0
    assert json.loads((trun / "resolved_config.json").read_text())["task"] == "colorize_supervised"
    clip = tmp_path / "in.ivc"
    io.write_clip(clip, np.zeros((8, 16, 16, 3), np.float32))
    tck = str(trun / "ckpt_000001.ivgc")
    assert cli.main(["apply", "--task", "colorize-sup", "--ckpt", tck, "--input", str(clip),
                     "--out", str(tmp_path / "ap"), "--frames"]) == 0
    assert io.read_clip(tmp_path / "ap" / "output.ivc").shape == (8, 16, 16, 3)
    assert len(os.listdir(tmp_path / "ap" / "output")) == 8
    # unconditional checkpoint has no encoder
    assert cli.main(["apply", "--task", "inpaint", "--ckpt", ck, "--input", str(clip),
                     "--out", str(tmp_path / "x")]) == 1


def test_cli_bad_config_exit(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"lambda": -1}')
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_cli_gradcheck(capsys):
    assert cli.main(["gradcheck", "--quiet"]) == 0
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["failed"] == []
