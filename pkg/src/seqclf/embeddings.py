"""Binary container for frozen-encoder embeddings, one file per (recording, layer).

Layout (all little-endian)::

    magic "SEQEMB01" (8) | layer_index i32 | T u32 | D u32 | frame_period_ms u32
    | payload T*D float32, row-major | FNV-1a 64 of header (after the magic) and payload, u64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checksum import fnv1a64
from .errors import ConfigurationError, CorruptionError, DataError, FormatError

MAGIC = b"SEQEMB01"
HEADER = struct.Struct("<8siIII")
TRAILER = struct.Struct("<Q")
LOGMEL_LAYER = -1
LOGMEL_DIM = 128
MAX_LAYER = 31
USM_DIM = 1536


@dataclass
class EmbeddingSequence:
    frames: np.ndarray
    source_layer: int
    frame_period_ms: int = 10
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise DataError(f"embedding frames must be a non-empty T x D matrix, got shape {self.frames.shape}")
        if self.mask is None:
            self.mask = np.ones(self.frames.shape[0], dtype=bool)
        if not np.all(np.isfinite(self.frames)):
            raise DataError("embedding frames contain non-finite values")

    @property
    def T(self):
        return self.frames.shape[0]

    @property
    def D(self):
        return self.frames.shape[1]


def _check_source(layer, dim):
    if not LOGMEL_LAYER <= layer <= MAX_LAYER:
        raise ConfigurationError(f"layer_index {layer} outside [-1, {MAX_LAYER}]")
    if layer == LOGMEL_LAYER and dim != LOGMEL_DIM:
        raise ConfigurationError(f"layer_index -1 (log-mel) requires D={LOGMEL_DIM}, got D={dim}")


def encode_embeddings(seq):
    _check_source(seq.source_layer, seq.D)
    payload = seq.frames.astype("<f4").tobytes()
    header = HEADER.pack(MAGIC, seq.source_layer, seq.T, seq.D, int(seq.frame_period_ms))
    return header + payload + TRAILER.pack(fnv1a64(header[len(MAGIC):] + payload))


def decode_embeddings(blob, expected_layer=None, where="<bytes>"):
    if len(blob) < HEADER.size:
        raise FormatError(f"{where}: not an embedding file (too short for header)")
    magic, layer, T, D, period = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{where}: not an embedding file (bad magic {magic!r})")
    expected_size = HEADER.size + T * D * 4 + TRAILER.size
    if len(blob) != expected_size:
        raise CorruptionError(f"{where}: size {len(blob)} bytes, header implies {expected_size} (truncated or padded)")
    if T < 1 or D < 1:
        raise CorruptionError(f"{where}: empty embedding matrix T={T} D={D}")
    _check_source(layer, D)
    if expected_layer is not None and layer != expected_layer:
        raise ConfigurationError(f"{where}: file holds layer {layer}, expected layer {expected_layer}")
    payload = blob[HEADER.size : HEADER.size + T * D * 4]
    (stored,) = TRAILER.unpack_from(blob, HEADER.size + T * D * 4)
    if fnv1a64(blob[len(MAGIC) : HEADER.size] + payload) != stored:
        raise CorruptionError(f"{where}: checksum mismatch")
    frames = np.frombuffer(payload, dtype="<f4").reshape(T, D).astype(np.float32)
    if not np.all(np.isfinite(frames)):
        raise CorruptionError(f"{where}: payload contains non-finite values")
    return EmbeddingSequence(frames, layer, period)


def write_embeddings(seq, path):
    path = Path(path)
    blob = encode_embeddings(seq)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
    except OSError as exc:
        raise FormatError(f"cannot write embeddings to {path}: {exc}") from exc


def read_embeddings(path, expected_layer=None):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read embeddings from {path}: {exc}") from exc
    return decode_embeddings(blob, expected_layer, where=str(path))


def batch_pad(seqs):
    """Zero-pad to the longest sequence. Returns (frames [B, T_max, D], masks [B, T_max])."""
    seqs = list(seqs)
    if not seqs:
        raise DataError("batch_pad needs at least one sequence")
    dims = {s.D for s in seqs}
    layers = {s.source_layer for s in seqs}
    if len(dims) > 1:
        raise DataError(f"cannot batch sequences of different dims {sorted(dims)}")
    if len(layers) > 1:
        raise DataError(f"cannot batch sequences from different layers {sorted(layers)}")
    t_max = max(s.T for s in seqs)
    out = np.zeros((len(seqs), t_max, seqs[0].D), dtype=np.float32)
    masks = np.zeros((len(seqs), t_max), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : s.T] = s.frames
        masks[i, : s.T] = s.mask
    return out, masks


def pseudo_encoder_matrix(layer, in_dim=LOGMEL_DIM, out_dim=USM_DIM, seed=0):
    """Semi-orthogonal [in_dim, out_dim] projection keyed by layer index."""
    rng = np.random.default_rng([seed, layer + 1000])
    q, _ = np.linalg.qr(rng.normal(size=(out_dim, in_dim)))
    return q.T


def pseudo_encode(logmel_frames, layer, out_dim=USM_DIM, stride=4, seed=0):
    """Non-semantic stand-in for a frozen encoder layer.

    Averages ``stride`` consecutive log-mel frames (10 ms -> 40 ms) and applies
    a fixed random orthogonal projection to ``out_dim``.  All layers carry the
    same information; only the basis differs.
    """
    x = np.asarray(logmel_frames, dtype=np.float64)
    if layer < 0:
        raise ConfigurationError("pseudo-encoder layers are 0..31; -1 is reserved for log-mel")
    T = max(1, x.shape[0] // stride)
    x = x[: T * stride].reshape(T, stride, x.shape[1]).mean(axis=1) if x.shape[0] >= stride else x.mean(0, keepdims=True)
    proj = pseudo_encoder_matrix(layer, x.shape[1], out_dim, seed)
    return EmbeddingSequence((x @ proj).astype(np.float32), layer, 10 * stride)
