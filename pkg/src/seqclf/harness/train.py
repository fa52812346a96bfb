"""Training loop, prediction and protocol-checked evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import nn
from ..errors import DataError, NumericalError, ProtocolError
from ..models import bce_loss, build_model, load_checkpoint, save_checkpoint
from ..nn.optim import Adam
from ..synth.corpus import speaker_disjoint_split
from ..synth.labels import LABELS
from .config import TrainConfig
from .data import Corpus, pool_frames
from .metrics import compute_metrics

EVAL_BATCH = 32
# mean BCE per label above this means the run has diverged (a constant 0.5 predictor scores ln 2)
DIVERGED_LOSS = 1e4


@dataclass
class TrainResult:
    model: object
    norm: tuple  # (mean [D], std [D]) or None
    history: list
    best_epoch: int
    fit_ids: list
    val_ids: list
    config: TrainConfig
    metadata: dict = field(default_factory=dict)


def split_ids(corpus: Corpus, config: TrainConfig):
    """(train ids, test ids) for the configured split seed, restricted to the configured tasks."""
    tasks = {t.value for t in config.task_list()}
    rows = [r for r in corpus.rows if r["task"] in tasks]
    if not rows:
        raise DataError(f"corpus has no recordings for tasks {sorted(tasks)}")
    return speaker_disjoint_split(rows, config.train_fraction, config.split_seed)


def check_disjoint(corpus: Corpus, train_ids, test_ids):
    leaked = corpus.speakers(train_ids) & corpus.speakers(test_ids)
    if leaked:
        raise ProtocolError(f"{len(leaked)} speakers appear in both training and test: {sorted(leaked)[:5]}")


def _prepare(corpus, config, ids, norm):
    layer = config.source_layer()
    seqs = corpus.features(layer, ids)
    out = []
    for s in seqs:
        x = pool_frames(s.frames[s.mask], config.frame_stride).astype(np.float32)
        if norm is not None:
            x = (x - norm[0]) / norm[1]
        out.append(x)
    return out


def _norm_stats(frames):
    allf = np.concatenate(frames, axis=0).astype(np.float64)
    return allf.mean(axis=0).astype(np.float32), (allf.std(axis=0) + 1e-5).astype(np.float32)


def _pad(frames):
    t_max = max(f.shape[0] for f in frames)
    x = np.zeros((len(frames), t_max, frames[0].shape[1]), dtype=np.float32)
    m = np.zeros((len(frames), t_max), dtype=bool)
    for i, f in enumerate(frames):
        x[i, : f.shape[0]] = f
        m[i, : f.shape[0]] = True
    return x, m


def _logits(model, frames, task_ids):
    out = []
    with nn.no_grad(), np.errstate(over="ignore", invalid="ignore"):
        for s in range(0, len(frames), EVAL_BATCH):
            x, m = _pad(frames[s : s + EVAL_BATCH])
            t = task_ids[s : s + EVAL_BATCH] if model.config.task_conditioning == "embedding" else None
            out.append(np.asarray(model(x, m, t).data, dtype=np.float64))
    return np.concatenate(out, axis=0)


def _bce(logits, y, mask):
    """Applicability-weighted mean BCE in float64."""
    z, m = np.asarray(logits, np.float64), np.asarray(mask, np.float64)
    per = np.maximum(z, 0) - z * np.asarray(y, np.float64) + np.log1p(np.exp(-np.abs(z)))
    return float((per * m).sum() / max(m.sum(), 1.0))


def _finite(model):
    return all(np.isfinite(p.data).all() for p in model.parameters())


def shuffled_labels(labels, applicable, tasks, seed):
    """Permute whole label rows among recordings of the same task (negative control)."""
    labels = np.asarray(labels)
    y = labels.copy()
    rng = np.random.default_rng([seed, 99])
    tasks = np.asarray(tasks)
    for t in np.unique(tasks):
        idx = np.flatnonzero(tasks == t)
        y[idx] = labels[rng.permutation(idx)]
    return (y * np.asarray(applicable)).astype(labels.dtype)


def train(config: TrainConfig, corpus: Corpus, train_ids, log=None, monitor=None):
    """Fit a model on ``train_ids``; a speaker-disjoint slice of them is held out for early stopping.

    ``monitor(model, norm, epoch)`` may return extra fields for each history entry.
    """
    if not train_ids:
        raise DataError("empty training set")
    pos = corpus.positions(train_ids)
    tasks = {t.value for t in config.task_list()}
    bad = [i for i in train_ids if corpus.rows[corpus.index[i]]["task"] not in tasks]
    if bad:
        raise DataError(f"{len(bad)} training ids belong to tasks outside {sorted(tasks)}: {bad[:5]}")
    rows = [corpus.rows[p] for p in pos]
    if config.val_fraction > 0 and len({r["speaker_id"] for r in rows}) >= 2:
        fit_ids, val_ids = speaker_disjoint_split(rows, 1.0 - config.val_fraction, config.seed + 7919)
    else:
        fit_ids, val_ids = list(train_ids), []

    # labels for every training-side recording; the negative control shuffles them before the validation cut
    all_y = corpus.labels[pos].copy()
    if config.shuffle_labels:
        all_y = shuffled_labels(all_y, corpus.applicable[pos], corpus.task_ids[pos], config.seed)
    label_of = dict(zip(train_ids, all_y))

    fit_pos, val_pos = corpus.positions(fit_ids), corpus.positions(val_ids)
    raw = _prepare(corpus, config, fit_ids, None)
    norm = _norm_stats(raw) if config.normalization == "zscore" else None
    fit_x = [(x - norm[0]) / norm[1] for x in raw] if norm is not None else raw
    val_x = _prepare(corpus, config, val_ids, norm) if val_ids else []
    val_y = np.array([label_of[i] for i in val_ids]).reshape(len(val_ids), len(LABELS))
    input_dim = fit_x[0].shape[1]

    y = np.array([label_of[i] for i in fit_ids], dtype=np.float64)
    w = corpus.applicable[fit_pos].astype(np.float64)
    task_ids = corpus.task_ids[fit_pos]

    model = build_model(config.model_config(input_dim))
    opt = Adam(model.named_parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)
    conditioned = model.config.task_conditioning == "embedding"
    rng = np.random.default_rng([config.seed, 1])
    history, best, best_state, best_epoch, stale = [], -math.inf, model.state_dict(), -1, 0

    steps_per_epoch = -(-len(fit_x) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs

    for epoch in range(config.epochs):
        order = rng.permutation(len(fit_x))
        total, count = 0.0, 0
        for step, s in enumerate(range(0, len(order), config.batch_size)):
            if config.lr_schedule == "cosine":
                opt.lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * (epoch * steps_per_epoch + step) / total_steps))
            b = order[s : s + config.batch_size]
            xb, mb = _pad([fit_x[i] for i in b])
            opt.zero_grad()
            with np.errstate(over="ignore", invalid="ignore"):
                logits = model(xb, mb, task_ids[b] if conditioned else None)
            with np.errstate(over="ignore", invalid="ignore"):
                loss = bce_loss(logits, y[b], w[b])
                value = float(loss.data)
                if math.isfinite(value):
                    loss.backward()
                    opt.step()
            if not math.isfinite(value) or value > DIVERGED_LOSS or not _finite(model):
                raise NumericalError(
                    f"training diverged (loss {value:.3g}) at epoch {epoch}, step {step} (lr={config.lr}); "
                    "try a lower learning rate"
                )
            if config.weight_decay:
                for p in model.parameters():
                    p.data *= 1.0 - opt.lr * config.weight_decay
            total += value * len(b)
            count += len(b)
        entry = {"epoch": epoch, "train_loss": total / count}
        if val_x:
            val_logits = _logits(model, val_x, corpus.task_ids[val_pos])
            rep = compute_metrics([corpus.rows[p]["task"] for p in val_pos], val_y, corpus.applicable[val_pos],
                                  (val_logits >= 0).astype(np.int8))
            entry["val_mean_accuracy"] = rep.mean_accuracy
            entry["val_loss"] = _bce(val_logits, val_y, corpus.applicable[val_pos])
            score = rep.mean_accuracy if config.early_stop_metric == "accuracy" else -entry["val_loss"]
        else:
            score = -entry["train_loss"]
        if monitor is not None:
            entry.update(monitor(model, norm, epoch))
        history.append(entry)
        if log is not None:
            log(entry)
        if score > best:
            best, best_state, best_epoch, stale = score, model.state_dict(), epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, norm, history, best_epoch, list(fit_ids), list(val_ids), config)


def predict_logits(model, norm, config: TrainConfig, corpus: Corpus, ids):
    frames = _prepare(corpus, config, ids, norm)
    return _logits(model, frames, corpus.task_ids[corpus.positions(ids)])


def evaluate_model(model, norm, config, corpus: Corpus, test_ids, train_ids, restrict=None, **meta):
    """Score ``model`` on ``test_ids`` after re-checking speaker disjointness."""
    if not test_ids:
        raise DataError("cannot evaluate an empty test set")
    check_disjoint(corpus, train_ids, test_ids)
    pos = corpus.positions(test_ids)
    preds = (predict_logits(model, norm, config, corpus, test_ids) >= 0).astype(np.int8)
    return compute_metrics(
        [corpus.rows[p]["task"] for p in pos], corpus.labels[pos], corpus.applicable[pos], preds,
        restrict=restrict, config_digest=config.digest(), corpus_digest=corpus.digest, metadata=meta,
    )


# checkpoints carry the train config, normalization and the training speakers


def save_run(path, result: TrainResult, corpus: Corpus):
    extras = {}
    if result.norm is not None:
        extras["norm_mean"], extras["norm_std"] = result.norm
    meta = {
        "train_config": result.config.to_dict(),
        "config_digest": result.config.digest(),
        "corpus_digest": corpus.digest,
        "train_speakers": sorted(corpus.speakers(result.fit_ids + result.val_ids)),
        "best_epoch": result.best_epoch,
        "labels": list(LABELS),
    }
    save_checkpoint(path, result.model, extras, meta)


def load_run(path):
    """Returns (model, norm, config, metadata)."""
    model, extras, meta = load_checkpoint(path)
    if "train_config" not in meta:
        raise DataError(f"{path}: checkpoint has no training metadata")
    config = TrainConfig(**meta["train_config"])
    norm = (extras["norm_mean"], extras["norm_std"]) if "norm_mean" in extras else None
    return model, norm, config, meta


def evaluate_checkpoint(path, corpus: Corpus, test_ids):
    model, norm, config, meta = load_run(path)
    if not test_ids:
        raise DataError("cannot evaluate an empty test set")
    leaked = set(meta.get("train_speakers", [])) & corpus.speakers(test_ids)
    if leaked:
        raise ProtocolError(f"{len(leaked)} test speakers were used in training: {sorted(leaked)[:5]}")
    train_ids = [r["id"] for r in corpus.rows if r["speaker_id"] in set(meta.get("train_speakers", []))]
    return evaluate_model(model, norm, config, corpus, test_ids, train_ids, checkpoint=str(path))


def write_history(path, history):
    Path(path).write_text("".join(json.dumps(h) + "\n" for h in history), encoding="utf-8")
