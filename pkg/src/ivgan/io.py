"""Byte-level file formats: IVGC checkpoints, .ivc clips, frame export.

All multi-byte integers and floats are little-endian. Writes go to a
temporary file in the target directory and are renamed into place.
"""

from collections import OrderedDict
import os
import struct
import tempfile
import zlib

import numpy as np

CKPT_MAGIC = b"IVGC"
CKPT_VERSION = 1
CLIP_MAGIC = b"IVCL"
CLIP_VERSION = 1

_DTYPES = {0: np.dtype("<f4")}
_CODES = {np.dtype("float32"): 0}


class FormatError(ValueError):
    pass


def atomic_write(path, data):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# checkpoints

def encode_checkpoint(tensors):
    """Serialize an ordered mapping of name -> float32 array.

    Layout: magic, u32 version, u32 count, then per tensor u32 name length,
    UTF-8 name, u32 ndim, u32 extents, u8 dtype code, raw data; finally a
    u32 CRC-32 of every preceding byte.
    """
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", code))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data):
    if len(data) < 16 or data[:4] != CKPT_MAGIC:
        raise FormatError("not an IVGC checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint CRC mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 12
    out = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            (code,) = struct.unpack_from("<B", body, off)
            off += 1
            dt = _DTYPES.get(code)
            if dt is None:
                raise FormatError(f"unknown dtype code {code}")
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + size > len(body):
                raise FormatError("truncated checkpoint")
            out[name] = np.frombuffer(body, dtype=dt, count=size // dt.itemsize, offset=off).reshape(shape).astype(np.float32)
            off += size
    except struct.error as e:
        raise FormatError(f"truncated checkpoint: {e}") from None
    if off != len(body):
        raise FormatError("trailing bytes after last tensor")
    return out


def save_checkpoint(path, tensors):
    atomic_write(path, encode_checkpoint(tensors))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


# ---------------------------------------------------------------------------
# clips

def encode_clip(clip):
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise FormatError(f"a clip is (T, H, W, C), got shape {clip.shape}")
    head = CLIP_MAGIC + struct.pack("<5I", CLIP_VERSION, *clip.shape)
    return head + np.ascontiguousarray(clip, dtype="<f4").tobytes()


def decode_clip(data):
    if len(data) < 24 or data[:4] != CLIP_MAGIC:
        raise FormatError("not an .ivc clip")
    version, t, h, w, c = struct.unpack_from("<5I", data, 4)
    if version != CLIP_VERSION:
        raise FormatError(f"unsupported clip version {version}")
    n = t * h * w * c
    if len(data) != 24 + 4 * n:
        raise FormatError(f"header says {t}x{h}x{w}x{c} but payload has {(len(data) - 24) / 4:g} values")
    return np.frombuffer(data, dtype="<f4", offset=24).reshape(t, h, w, c).astype(np.float32)


def write_clip(path, clip):
    atomic_write(path, encode_clip(clip))


def read_clip(path):
    with open(path, "rb") as f:
        return decode_clip(f.read())


# ---------------------------------------------------------------------------
# frames

def to_bytes(x):
    """[-1, 1] -> {0..255} via (v + 1) / 2 * 255, rounding half up."""
    v = (np.clip(np.asarray(x, np.float64), -1, 1) + 1.0) * 0.5 * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def export_frames(clip, outdir, prefix="frame"):
    """Write one binary PPM (P6) per frame; grayscale is replicated to RGB."""
    clip = np.asarray(clip)
    if clip.ndim != 4 or clip.shape[-1] not in (1, 3):
        raise FormatError(f"export_frames needs (T, H, W, 1|3), got {clip.shape}")
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create frame directory {outdir}: {e}") from e
    if not os.access(outdir, os.W_OK):
        raise PermissionError(f"frame directory {outdir} is not writable")
    t, h, w, c = clip.shape
    width = max(4, len(str(t - 1)))
    paths = []
    for i in range(t):
        px = to_bytes(clip[i])
        if c == 1:
            px = np.repeat(px, 3, axis=-1)
        path = os.path.join(outdir, f"{prefix}_{i:0{width}d}.ppm")
        atomic_write(path, b"P6\n%d %d\n255\n" % (w, h) + px.tobytes())
        paths.append(path)
    return paths
