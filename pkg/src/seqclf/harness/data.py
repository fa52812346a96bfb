"""Corpus directories, feature extraction and feature loading.

Layout of a corpus directory::

    manifest.jsonl  corpus.json  audio/<id>.wav
    features/logmel/<id>.emb  features/layer<k>/<id>.emb
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..audio import FrontendConfig, log_mel, read_wav
from ..embeddings import EmbeddingSequence, pseudo_encode, read_embeddings, write_embeddings
from ..errors import DataError, FormatError
from ..synth.corpus import CORPUS_INFO_NAME, MANIFEST_NAME, label_matrix, manifest_digest, read_manifest
from ..synth.labels import TASK_INDEX, TaskKind


def feature_dirname(layer):
    return "logmel" if layer < 0 else f"layer{layer:02d}"


class Corpus:
    """Manifest rows plus lazily loaded, cached feature sequences."""

    def __init__(self, root, rows=None):
        self.root = Path(root)
        if rows is None:
            if not (self.root / MANIFEST_NAME).exists():
                raise DataError(f"{self.root} has no {MANIFEST_NAME}; run gen-data first")
            rows = read_manifest(self.root / MANIFEST_NAME)
        self.rows = list(rows)
        self.index = {r["id"]: i for i, r in enumerate(self.rows)}
        self.digest = manifest_digest(self.rows)
        self.labels, self.applicable = label_matrix(self.rows)
        self.task_ids = np.array([TASK_INDEX[TaskKind.parse(r["task"])] for r in self.rows], dtype=np.int64)
        self._features = {}

    def positions(self, ids):
        missing = [i for i in ids if i not in self.index]
        if missing:
            raise DataError(f"ids not in manifest: {missing[:10]}{' ...' if len(missing) > 10 else ''}")
        return np.array([self.index[i] for i in ids], dtype=np.int64)

    def speakers(self, ids):
        return {self.rows[self.index[i]]["speaker_id"] for i in ids}

    def info(self):
        p = self.root / CORPUS_INFO_NAME
        return json.loads(p.read_text()) if p.exists() else {}

    def set_features(self, layer, seqs):
        """Install in-memory features (id -> EmbeddingSequence), bypassing the files."""
        self._features.setdefault(layer, {}).update(seqs)

    def drop_features(self, layer):
        self._features.pop(layer, None)

    def features(self, layer, ids):
        cache = self._features.setdefault(layer, {})
        todo = [i for i in ids if i not in cache]
        if todo:
            d = self.root / "features" / feature_dirname(layer)
            missing = [i for i in todo if not (d / f"{i}.emb").exists()]
            if missing:
                raise DataError(
                    f"missing {feature_dirname(layer)} features for {len(missing)} recordings: "
                    f"{missing[:10]}{' ...' if len(missing) > 10 else ''}"
                )
            for i in todo:
                cache[i] = read_embeddings(d / f"{i}.emb", expected_layer=layer)
        return [cache[i] for i in ids]


def featurize(corpus: Corpus, config=None, overwrite=False):
    """Write log-mel .emb files for every recording.  Returns the number written."""
    cfg = config or FrontendConfig()
    out = corpus.root / "features" / "logmel"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for r in corpus.rows:
        path = out / f"{r['id']}.emb"
        if path.exists() and not overwrite:
            continue
        wav = corpus.root / r["path"]
        if not wav.exists():
            raise DataError(f"audio file missing for {r['id']}: {wav}")
        mel = log_mel(read_wav(wav), cfg)
        write_embeddings(EmbeddingSequence(mel.frames, -1, int(round(cfg.hop_ms))), path)
        n += 1
    return n


def logmel_sequences(corpus: Corpus, config=None):
    """Compute log-mel features in memory without touching the features directory."""
    cfg = config or FrontendConfig()
    seqs = {}
    for r in corpus.rows:
        mel = log_mel(read_wav(corpus.root / r["path"]), cfg)
        seqs[r["id"]] = EmbeddingSequence(mel.frames, -1, int(round(cfg.hop_ms)))
    return seqs


def pseudo_encode_corpus(corpus: Corpus, layers, overwrite=False):
    """Derive pseudo-encoder layer files from the log-mel files."""
    ids = [r["id"] for r in corpus.rows]
    mels = corpus.features(-1, ids)
    for k in layers:
        out = corpus.root / "features" / feature_dirname(k)
        out.mkdir(parents=True, exist_ok=True)
        for i, mel in zip(ids, mels):
            path = out / f"{i}.emb"
            if path.exists() and not overwrite:
                continue
            write_embeddings(pseudo_encode(mel.frames, k), path)


def pool_frames(frames, stride):
    """Mean over non-overlapping groups of ``stride`` frames (a trailing partial group is averaged too)."""
    if stride <= 1:
        return frames
    T, D = frames.shape
    full = T // stride
    parts = []
    if full:
        parts.append(frames[: full * stride].reshape(full, stride, D).mean(axis=1))
    if T % stride:
        parts.append(frames[full * stride :].mean(axis=0, keepdims=True))
    return np.concatenate(parts, axis=0)


def read_ids(path):
    """One recording id per line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read id list {path}: {exc}") from exc
    return [s.strip() for s in lines if s.strip()]
