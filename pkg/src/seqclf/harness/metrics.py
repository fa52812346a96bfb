"""Per-label accuracy over applicable recordings, and the metrics file format.

A metrics file is UTF-8 JSON lines: a ``summary`` record first, then one
``label`` record per label in canonical order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError, FormatError
from ..synth.labels import LABELS, TaskKind

REFERENCE_FLAG = "reference, private-data, not reproducible"


@dataclass
class MetricsReport:
    per_label_accuracy: dict  # label -> float, or None when no recording was scored
    mean_accuracy: float  # mean over evaluated labels
    pair_accuracy: float  # correct (recording, label) pairs / scored pairs
    per_task: dict  # task -> {"mean_accuracy", "per_label"}
    confusion: dict  # label -> {"tp", "fp", "tn", "fn"}
    num_recordings: int
    config_digest: str = ""
    corpus_digest: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def evaluated_labels(self):
        return [k for k in LABELS if self.per_label_accuracy.get(k) is not None]

    def to_records(self):
        head = {
            "kind": "summary",
            "mean_accuracy": self.mean_accuracy,
            "pair_accuracy": self.pair_accuracy,
            "num_recordings": self.num_recordings,
            "config_digest": self.config_digest,
            "corpus_digest": self.corpus_digest,
            "per_task": self.per_task,
            "metadata": self.metadata,
        }
        body = [
            {"kind": "label", "label": k, "accuracy": self.per_label_accuracy.get(k), **self.confusion[k]}
            for k in LABELS
        ]
        return [head, *body]

    def to_text(self):
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.to_records())


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def compute_metrics(tasks, labels, applicable, predictions, restrict=None, **extra):
    """Score binary predictions.

    tasks: task name per recording; labels/applicable/predictions: [N, 14].
    ``restrict`` limits scoring to a subset of label names.
    """
    y = np.asarray(labels).astype(np.int8)
    p = np.asarray(predictions).astype(np.int8)
    m = np.asarray(applicable).astype(bool).copy()
    if y.shape != p.shape or y.shape != m.shape or y.ndim != 2 or y.shape[1] != len(LABELS):
        raise DataError(f"labels {y.shape}, predictions {p.shape} and mask {m.shape} must all be [N, 14]")
    if y.shape[0] == 0:
        raise DataError("cannot evaluate an empty test set")
    if restrict is not None:
        keep = np.array([k in set(restrict) for k in LABELS])
        m &= keep[None, :]
    tasks = [TaskKind.parse(t).value for t in tasks]
    per_label, confusion = {}, {}
    for j, k in enumerate(LABELS):
        sel = m[:, j]
        yy, pp = y[sel, j], p[sel, j]
        confusion[k] = {
            "tp": int(((pp == 1) & (yy == 1)).sum()),
            "fp": int(((pp == 1) & (yy == 0)).sum()),
            "tn": int(((pp == 0) & (yy == 0)).sum()),
            "fn": int(((pp == 0) & (yy == 1)).sum()),
        }
        per_label[k] = float((yy == pp).mean()) if sel.any() else None
    scored = m.sum()
    pair = float(((y == p) & m).sum() / scored) if scored else None
    per_task = {}
    for t in sorted(set(tasks)):
        rows = np.array([x == t for x in tasks])
        acc = {}
        for j, k in enumerate(LABELS):
            sel = rows & m[:, j]
            if sel.any():
                acc[k] = float((y[sel, j] == p[sel, j]).mean())
        per_task[t] = {"mean_accuracy": _mean(acc.values()), "per_label": acc, "num_recordings": int(rows.sum())}
    return MetricsReport(
        per_label_accuracy=per_label,
        mean_accuracy=_mean(per_label.values()),
        pair_accuracy=pair,
        per_task=per_task,
        confusion=confusion,
        num_recordings=int(y.shape[0]),
        **extra,
    )


def prior_baseline(train_labels, train_applicable, test_labels, test_applicable, tasks=None):
    """Accuracy of predicting each label's training-majority value on the test set."""
    y = np.asarray(train_labels, dtype=float)
    m = np.asarray(train_applicable, dtype=bool)
    pos = np.array([y[m[:, j], j].mean() if m[:, j].any() else 0.0 for j in range(len(LABELS))])
    pred = np.broadcast_to((pos > 0.5).astype(np.int8), np.shape(test_labels))
    tasks = tasks if tasks is not None else ["VP"] * len(test_labels)
    return compute_metrics(tasks, test_labels, test_applicable, pred)


def write_metrics(report: MetricsReport, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_text(), encoding="utf-8")


def read_metrics(path):
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read metrics file {path}: {exc}") from exc
    try:
        recs = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed metrics record ({exc.msg})") from exc
    if not recs or not isinstance(recs[0], dict) or recs[0].get("kind") != "summary":
        raise FormatError(f"{path}: first record must be the summary")
    head, body = recs[0], recs[1:]
    if [r.get("label") if isinstance(r, dict) else None for r in body] != list(LABELS):
        raise FormatError(f"{path}: expected one label record per label in canonical order")
    per_label, confusion = {}, {}
    try:
        for r in body:
            acc = r["accuracy"]
            if acc is not None and not (isinstance(acc, (int, float)) and 0.0 <= acc <= 1.0):
                raise FormatError(f"{path}: accuracy for {r['label']} must lie in [0, 1], got {acc!r}")
            per_label[r["label"]] = acc
            confusion[r["label"]] = {k: int(r[k]) for k in ("tp", "fp", "tn", "fn")}
        return MetricsReport(
            per_label_accuracy=per_label,
            mean_accuracy=head["mean_accuracy"],
            pair_accuracy=head["pair_accuracy"],
            per_task=head["per_task"],
            confusion=confusion,
            num_recordings=int(head["num_recordings"]),
            config_digest=head.get("config_digest", ""),
            corpus_digest=head.get("corpus_digest", ""),
            metadata=head.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: metrics record missing or invalid field ({exc})") from exc
