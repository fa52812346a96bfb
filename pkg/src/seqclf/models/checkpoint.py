"""Single-file model checkpoints.

Layout (little-endian)::

    magic "SLCKPT01" | u32 len | config JSON (UTF-8, sorted keys)
    | u32 blob count | per blob: u32 name len, name, u32 ndim, ndim x u32 dims, float32 payload
    | u64 FNV-1a over every preceding byte

Blobs hold model parameters plus any extra named arrays (e.g. feature
normalization statistics under ``extra/``).
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..checksum import fnv1a64
from ..errors import CorruptionError, FormatError
from .classifiers import build_model
from .config import ModelConfig

MAGIC = b"SLCKPT01"
EXTRA_PREFIX = "extra/"


def encode_checkpoint(config_record, blobs):
    out = bytearray(MAGIC)
    cfg = json.dumps(config_record, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        arr = np.asarray(arr, dtype="<f4")
        key = name.encode("utf-8")
        out += struct.pack("<I", len(key)) + key
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<Q", fnv1a64(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, blob, where):
        self.blob, self.pos, self.where = blob, 0, where

    def take(self, n):
        if n < 0 or self.pos + n > len(self.blob):
            raise CorruptionError(f"{self.where}: checkpoint truncated at byte {self.pos}")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def decode_checkpoint(blob, where="<bytes>"):
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{where}: not a checkpoint file")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a64(body) != stored:
        raise CorruptionError(f"{where}: checkpoint checksum mismatch")
    r = _Reader(body, where)
    r.take(len(MAGIC))
    try:
        config_record = json.loads(r.take(r.u32()).decode("utf-8"))
        blobs = OrderedDict()
        for _ in range(r.u32()):
            name = r.take(r.u32()).decode("utf-8")
            ndim = r.u32()
            shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
            count = int(np.prod(shape, dtype=np.int64))
            blobs[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    except (UnicodeDecodeError, json.JSONDecodeError, struct.error) as exc:
        raise CorruptionError(f"{where}: malformed checkpoint ({exc})") from exc
    if r.pos != len(body):
        raise CorruptionError(f"{where}: {len(body) - r.pos} trailing bytes after last blob")
    return config_record, blobs


def save_checkpoint(path, model, extras=None, metadata=None):
    record = {"model": model.config.to_dict(), "metadata": metadata or {}}
    blobs = OrderedDict(model.state_dict())
    for k, v in (extras or {}).items():
        blobs[EXTRA_PREFIX + k] = v
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(record, blobs))


def load_checkpoint(path):
    """Returns (model, extras, metadata)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    record, blobs = decode_checkpoint(blob, str(path))
    config = ModelConfig.from_dict(record["model"])
    model = build_model(config)
    params = {k: v for k, v in blobs.items() if not k.startswith(EXTRA_PREFIX)}
    extras = {k[len(EXTRA_PREFIX) :]: v for k, v in blobs.items() if k.startswith(EXTRA_PREFIX)}
    model.load_state_dict(params)
    return model, extras, record.get("metadata", {})
