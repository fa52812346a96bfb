"""Experiment drivers built from single train/evaluate runs.

Published results from the clinical corpus are attached as metadata only,
always under ``REFERENCE_FLAG``.  Nothing compares against them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..models import ARCHITECTURES
from ..synth.labels import LABELS, TaskKind, shared_labels
from .config import TrainConfig
from .data import Corpus
from .metrics import REFERENCE_FLAG, prior_baseline
from .train import check_disjoint, evaluate_model, split_ids, train

REFERENCE = {
    "compare": {"transformer_pool": 80.9, "perceiver_pool": 81.8, "class_latent": 83.1},
    "encodings": {"logmel": 76.4, "unsupervised": 82.0, "supervised": 83.1},
    "layer_sweep": {0: 79.6, 2: 80.5, 11: 83.1, 31: 79.3},
    "layer_sweep_per_label": {
        "syllable_segmentation": {0: 83.0, 31: 88.7},
        "irregular_articulatory_breakdowns": {0: 72.3, 31: 75.9},
        "loudness_decay": {0: 80.2, 31: 75.1},
        "breathy": {0: 81.0, 31: 76.4},
    },
    "pool_ablate": {"VP only": 83.6, "VP+AMR pooled": 84.1},
    "seed_sweep": [81.5, 81.8, 81.6, 82.1, 81.7, 81.7],
}


def reference(name):
    return {"flag": REFERENCE_FLAG, "values_percent": REFERENCE[name]}


def run(config: TrainConfig, corpus: Corpus, log=None, restrict=None, test_filter=None):
    """Split, train, evaluate.  Returns (report, train result, train ids, test ids)."""
    train_ids, test_ids = split_ids(corpus, config)
    if test_filter is not None:
        test_ids = [i for i in test_ids if test_filter(corpus.rows[corpus.index[i]])]
    check_disjoint(corpus, train_ids, test_ids)
    result = train(config, corpus, train_ids, log=log)
    report = evaluate_model(result.model, result.norm, config, corpus, test_ids, train_ids, restrict=restrict,
                            best_epoch=result.best_epoch)
    return report, result, train_ids, test_ids


def compare_architectures(corpus: Corpus, base: TrainConfig, seeds=(0, 1, 2), log=None):
    """One row per architecture: mean test accuracy over training seeds on a shared split."""
    rows = []
    for arch in ARCHITECTURES:
        per_seed = []
        for s in seeds:
            cfg = base.updated(architecture=arch, seed=s)
            rep, *_ = run(cfg, corpus, log=log)
            per_seed.append(rep.mean_accuracy)
        rows.append({
            "architecture": arch,
            "mean_accuracy": float(np.mean(per_seed)),
            "per_seed": per_seed,
            "config_digest": base.updated(architecture=arch).digest(),
        })
    by = {r["architecture"]: r for r in rows}
    cl = by["class_latent"]
    wins = [all(cl["per_seed"][i] >= by[a]["per_seed"][i] for a in ("transformer_pool", "perceiver_pool"))
            for i in range(len(seeds))]
    claim = {
        "class_latent_ge_baselines_on_mean": all(cl["mean_accuracy"] >= by[a]["mean_accuracy"]
                                                 for a in ("transformer_pool", "perceiver_pool")),
        "class_latent_wins_majority_of_seeds": sum(wins) > len(seeds) / 2,
        "seeds": list(seeds),
    }
    return {"name": "compare", "rows": rows, "directional_claim": claim, "reference": reference("compare"),
            "corpus_digest": corpus.digest}


def layer_sweep(corpus: Corpus, base: TrainConfig, layers=(0, 11, 31), frame_stride=1, log=None):
    rows = []
    for k in layers:
        cfg = base.updated(input_source=f"layer:{k}", frame_stride=frame_stride)
        rep, *_ = run(cfg, corpus, log=log)
        corpus.drop_features(k)
        rows.append({"layer": k, "mean_accuracy": rep.mean_accuracy, "per_label": rep.per_label_accuracy,
                     "config_digest": cfg.digest()})
    return {"name": "layer_sweep", "rows": rows, "reference": reference("layer_sweep"),
            "reference_per_label": {"flag": REFERENCE_FLAG, "values_percent": REFERENCE["layer_sweep_per_label"]},
            "corpus_digest": corpus.digest}


def task_pooling_ablation(corpus: Corpus, base: TrainConfig, log=None):
    """Labels shared by VP and AMR, scored on VP test recordings only."""
    missing = sorted({"VP", "AMR"} - {r["task"] for r in corpus.rows})
    if missing:
        raise DataError(f"task pooling ablation needs VP and AMR recordings; missing {missing}")
    shared = sorted(shared_labels(TaskKind.VP, TaskKind.AMR), key=LABELS.index)
    # one speaker split of the whole corpus, filtered per regime, keeps test speakers identical
    full = base.updated(tasks="VP,AMR,SMR", task_pooling="pooled")
    train_all, test_all = split_ids(corpus, full)
    vp_test = [i for i in test_all if corpus.rows[corpus.index[i]]["task"] == "VP"]
    regimes = [
        ("VP only", base.updated(tasks="VP", task_pooling="single", task_conditioning="none")),
        ("VP+AMR pooled", base.updated(tasks="VP,AMR", task_pooling="pooled", task_conditioning="none")),
        ("VP+AMR pooled + task id", base.updated(tasks="VP,AMR", task_pooling="pooled",
                                                 task_conditioning="embedding")),
    ]
    rows = []
    for name, cfg in regimes:
        allowed = {t.value for t in cfg.task_list()}
        train_ids = [i for i in train_all if corpus.rows[corpus.index[i]]["task"] in allowed]
        result = train(cfg, corpus, train_ids, log=log)
        rep = evaluate_model(result.model, result.norm, cfg, corpus, vp_test, train_ids, restrict=shared)
        rows.append({"training_data": name, "task_conditioning": cfg.task_conditioning,
                     "shared_label_accuracy": rep.mean_accuracy,
                     "per_label": {k: rep.per_label_accuracy[k] for k in shared}, "config_digest": cfg.digest()})
    return {"name": "pool_ablate", "shared_labels": shared, "rows": rows, "reference": reference("pool_ablate"),
            "corpus_digest": corpus.digest}


def split_seed_sweep(corpus: Corpus, base: TrainConfig, seeds=range(6), log=None):
    rows = []
    for s in seeds:
        cfg = base.updated(split_seed=s)
        rep, result, train_ids, test_ids = run(cfg, corpus, log=log)
        leaked = corpus.speakers(train_ids) & corpus.speakers(test_ids)
        rows.append({"split_seed": s, "mean_accuracy": rep.mean_accuracy, "speaker_overlap": len(leaked),
                     "num_test": len(test_ids), "config_digest": cfg.digest()})
    accs = [r["mean_accuracy"] for r in rows]
    return {"name": "seed_sweep", "rows": rows, "spread": float(max(accs) - min(accs)),
            "reference": reference("seed_sweep"), "corpus_digest": corpus.digest}


def negative_control(corpus: Corpus, base: TrainConfig, log=None):
    """Train on task-wise shuffled labels; compare with the majority-label baseline on the same test set."""
    cfg = base.updated(shuffle_labels=True)
    rep, result, train_ids, test_ids = run(cfg, corpus, log=log)
    tr, te = corpus.positions(train_ids), corpus.positions(test_ids)
    prior = prior_baseline(corpus.labels[tr], corpus.applicable[tr], corpus.labels[te], corpus.applicable[te],
                           [corpus.rows[p]["task"] for p in te])
    return {"name": "negative_control", "shuffled_mean_accuracy": rep.mean_accuracy,
            "prior_mean_accuracy": prior.mean_accuracy,
            "difference": rep.mean_accuracy - prior.mean_accuracy, "config_digest": cfg.digest()}


def write_result(result, out_dir):
    """``<name>.jsonl`` (header line then one line per row) and ``<name>.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.get("rows", [])
    head = {k: v for k, v in result.items() if k != "rows"}
    head["kind"] = "experiment"
    lines = [json.dumps(head, sort_keys=True)] + [json.dumps({"kind": "row", **r}, sort_keys=True) for r in rows]
    (out / f"{result['name']}.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if rows:
        flat = [{k: (json.dumps(v) if isinstance(v, (dict, list)) else v) for k, v in r.items()} for r in rows]
        with open(out / f"{result['name']}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(flat[0]))
            writer.writeheader()
            writer.writerows(flat)
    return out / f"{result['name']}.jsonl"
