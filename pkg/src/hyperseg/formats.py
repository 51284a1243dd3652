"""VOX1 volumes, HVC1 checkpoints and dataset manifests.

VOX1 layout (little-endian)::

    0   4s  magic  b"VOX1"
    4   u32 version (1)
    8   u32 x, u32 y, u32 z
    20  u8  dtype (0 = f32, 1 = u16, 2 = u8)
    21  3x  reserved, zero
    24  payload, x fastest then y then z

HVC1 layout (little-endian)::

    magic b"HVC1", u32 version, u32 config length + UTF-8 JSON,
    u32 parameter count + entries, u32 optimizer entry count + entries,
    u64 RNG seed

where an entry is ``u32 name length, UTF-8 name, u32 rank, rank x u32 dims,
f32 data`` (C order).
"""

import io
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

VOX_MAGIC = b"VOX1"
VOX_VERSION = 1
VOX_HEADER = struct.Struct("<4sI3IB3s")
VOX_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u2"), 2: np.dtype("u1")}
VOX_CODES = {np.dtype("float32"): 0, np.dtype("uint16"): 1, np.dtype("uint8"): 2}

HVC_MAGIC = b"HVC1"
HVC_VERSION = 1


def encode_vox(arr, dtype=None):
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise FormatError(f"VOX1 stores 3D arrays, got {arr.ndim}D")
    if dtype is not None:
        arr = arr.astype(dtype)
    elif arr.dtype.kind == "f":
        arr = arr.astype(np.float32)
    elif arr.dtype not in VOX_CODES:
        arr = arr.astype(np.uint8 if arr.max(initial=0) < 256 and arr.min(initial=0) >= 0 else np.uint16)
    code = VOX_CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"unsupported VOX1 dtype {arr.dtype}")
    header = VOX_HEADER.pack(VOX_MAGIC, VOX_VERSION, *arr.shape, code, b"\0\0\0")
    payload = arr.astype(VOX_DTYPES[code], copy=False).tobytes(order="F")
    return header + payload


def decode_vox(buf):
    if len(buf) < VOX_HEADER.size:
        raise FormatError("truncated VOX1 header", len(buf))
    magic, version, x, y, z, code, reserved = VOX_HEADER.unpack_from(buf, 0)
    if magic != VOX_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VOX_VERSION:
        raise FormatError(f"unsupported VOX1 version {version}", 4)
    if code not in VOX_DTYPES:
        raise FormatError(f"unknown dtype code {code}", 20)
    if reserved != b"\0\0\0":
        raise FormatError("reserved bytes must be zero", 21)
    dt = VOX_DTYPES[code]
    expected = x * y * z * dt.itemsize
    payload = buf[VOX_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"payload is {len(payload)} bytes, expected {expected}", VOX_HEADER.size)
    arr = np.frombuffer(payload, dtype=dt).reshape((x, y, z), order="F")
    return arr.astype(dt.newbyteorder("="), copy=True)


def write_vox(path, arr, dtype=None):
    Path(path).write_bytes(encode_vox(arr, dtype))


def read_vox(path):
    return decode_vox(Path(path).read_bytes())


@dataclass
class Checkpoint:
    config: dict
    params: "OrderedDict[str, torch.Tensor]"
    optimizer: "OrderedDict[str, torch.Tensor]" = field(default_factory=OrderedDict)
    seed: int = 0


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def text(self, what):
        n = self.u32(what + " length")
        at = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8", at) from exc


def _write_entries(out, entries):
    out.write(struct.pack("<I", len(entries)))
    for name, t in entries.items():
        arr = t.detach().cpu().to(torch.float32).numpy() if isinstance(t, torch.Tensor) else np.asarray(t, np.float32)
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_entries(r, what):
    count = r.u32(f"{what} count")
    entries = OrderedDict()
    for _ in range(count):
        name = r.text(f"{what} name")
        rank = r.u32(f"rank of {name}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"dims of {name}"))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * n, f"data of {name}"), dtype="<f4")
        entries[name] = torch.from_numpy(data.astype(np.float32).reshape(dims))
    return entries


def encode_checkpoint(ckpt):
    out = io.BytesIO()
    out.write(HVC_MAGIC)
    out.write(struct.pack("<I", HVC_VERSION))
    blob = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    _write_entries(out, ckpt.params)
    _write_entries(out, ckpt.optimizer)
    out.write(struct.pack("<Q", int(ckpt.seed)))
    return out.getvalue()


def decode_checkpoint(buf):
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != HVC_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    version = r.u32("version")
    if version != HVC_VERSION:
        raise FormatError(f"unsupported HVC1 version {version}", 4)
    at = r.pos + 4
    text = r.text("config")
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config blob is not JSON: {exc.msg}", at + exc.pos) from exc
    params = _read_entries(r, "parameter")
    optimizer = _read_entries(r, "optimizer entry")
    seed = r.u64("seed")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return Checkpoint(config, params, optimizer, seed)


def save_checkpoint(path, ckpt):
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


# -- dataset layout -------------------------------------------------------

MANIFEST = "manifest.json"


def volume_name(index):
    return f"vol_{index:03d}.vox"


def label_name(index, level):
    return f"vol_{index:03d}_l{level}.vox"


def write_manifest(directory, synth_config, records):
    doc = {"format": "hyperseg-dataset", "version": 1, "synth_config": synth_config,
           "volumes": records}
    (Path(directory) / MANIFEST).write_text(json.dumps(doc, indent=2))


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", exc.pos) from exc
