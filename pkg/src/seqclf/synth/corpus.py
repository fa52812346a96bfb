"""Corpus generation, manifests and speaker-disjoint splits.

A manifest is UTF-8 text with one JSON object per line.  Field order is
fixed: id, path, task, speaker_id, duration_s, the 14 label bits in
``LABELS`` order, generation_seed.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..audio import write_wav
from ..errors import ConfigurationError, DataError, FormatError
from .labels import APPLICABLE, LABEL_INDEX, LABELS, TaskKind
from .render import DURATION_RANGE, SpeakerProfile, inject_attribute, new_take, render

MANIFEST_FIELDS = ("id", "path", "task", "speaker_id", "duration_s", *LABELS, "generation_seed")
MANIFEST_NAME = "manifest.jsonl"
CORPUS_INFO_NAME = "corpus.json"
DEFAULT_PREVALENCE = 0.2


@dataclass
class CorpusSpec:
    num_speakers: int = 150
    recordings_per_speaker: int = 4
    task_mix: dict = field(default_factory=lambda: {"VP": 1.0, "AMR": 1.0, "SMR": 1.0})
    prevalence: float | dict = DEFAULT_PREVALENCE  # a dict overrides single labels
    master_seed: int = 0

    def validate(self):
        if self.num_speakers < 1 or self.recordings_per_speaker < 1:
            raise ConfigurationError("need at least one speaker and one recording per speaker")
        prev = self.prevalence if isinstance(self.prevalence, dict) else dict.fromkeys(LABELS, self.prevalence)
        for name, p in prev.items():
            if name not in LABEL_INDEX:
                raise ConfigurationError(f"unknown attribute {name!r} in prevalence")
            if not 0.1 <= float(p) <= 0.5:
                raise ConfigurationError(f"prevalence for {name} must lie in [0.1, 0.5], got {p}")
        mix = {TaskKind.parse(k): float(v) for k, v in self.task_mix.items()}
        if any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
            raise ConfigurationError("task mix weights must be non-negative with a positive sum")
        return self

    def prevalence_of(self, name):
        if isinstance(self.prevalence, dict):
            return float(self.prevalence.get(name, DEFAULT_PREVALENCE))
        return float(self.prevalence)

    def to_dict(self):
        return asdict(self)


def speaker_id(master_seed, index):
    return f"m{master_seed}-spk{index:04d}"


def _record_seed(master_seed, index):
    return np.random.SeedSequence([int(master_seed), int(index)])


def _draw_labels(rng, task, spec):
    allowed = APPLICABLE[task]
    labels = set()
    for name in LABELS:
        if name in allowed and name not in ("rapid_rate", "slow_rate") and rng.random() < spec.prevalence_of(name):
            labels.add(name)
    if "rapid_rate" in allowed:
        # one three-way draw keeps the rate labels exclusive with exact marginals
        pr, ps = spec.prevalence_of("rapid_rate"), spec.prevalence_of("slow_rate")
        u = rng.random()
        if u < pr:
            labels.add("rapid_rate")
        elif u < pr + ps:
            labels.add("slow_rate")
    return labels


def plan_corpus(spec: CorpusSpec):
    """Takes and manifest rows for ``spec`` without rendering audio."""
    spec.validate()
    tasks = [TaskKind.parse(k) for k in spec.task_mix]
    weights = np.array([float(spec.task_mix[k]) for k in spec.task_mix])
    weights = weights / weights.sum()
    plan = []
    for s in range(spec.num_speakers):
        sid = speaker_id(spec.master_seed, s)
        profile = SpeakerProfile.from_id(sid)
        for r in range(spec.recordings_per_speaker):
            index = s * spec.recordings_per_speaker + r
            rng = np.random.default_rng(_record_seed(spec.master_seed, index))
            task = tasks[int(rng.choice(len(tasks), p=weights))]
            lo, hi = DURATION_RANGE[task]
            duration = round(float(rng.uniform(lo, hi)), 3)
            gen_seed = int(rng.integers(2**62))
            labels = _draw_labels(rng, task, spec)
            take = new_take(task, profile, duration, gen_seed)
            for name in sorted(labels, key=LABEL_INDEX.get):
                take = inject_attribute(take, name, [gen_seed, LABEL_INDEX[name]])
            rec_id = f"{sid}-r{r}"
            row = {"id": rec_id, "path": f"audio/{rec_id}.wav", "task": task.value, "speaker_id": sid,
                   "duration_s": duration}
            row.update({name: int(name in labels) for name in LABELS})
            row["generation_seed"] = gen_seed
            plan.append((take, row))
    return plan


def manifest_bytes(rows):
    return b"".join((json.dumps(r, separators=(",", ":")) + "\n").encode("utf-8") for r in rows)


def manifest_digest(rows):
    return hashlib.sha256(manifest_bytes(rows)).hexdigest()


def _render_to(args):
    take, path = args
    write_wav(path, render(take))
    return path


def gen_corpus(spec: CorpusSpec, out_dir, workers=1):
    """Render every recording to ``out_dir/audio`` and write the manifest.  Returns the rows."""
    out = Path(out_dir)
    plan = plan_corpus(spec)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    jobs = [(take, out / row["path"]) for take, row in plan]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_render_to, jobs, chunksize=8))
    else:
        for job in jobs:
            _render_to(job)
    rows = [row for _, row in plan]
    write_manifest(out / MANIFEST_NAME, rows)
    info = {"spec": spec.to_dict(), "num_recordings": len(rows), "manifest_digest": manifest_digest(rows)}
    (out / CORPUS_INFO_NAME).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return rows


def write_manifest(path, rows):
    for r in rows:
        if tuple(r) != MANIFEST_FIELDS:
            raise DataError(f"manifest row {r.get('id')!r} does not follow the field order")
    Path(path).write_bytes(manifest_bytes(rows))


def read_manifest(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    rows, seen = [], set()
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{n}: not a JSON record ({exc.msg})") from exc
        if not isinstance(row, dict) or tuple(row) != MANIFEST_FIELDS:
            raise FormatError(f"{path}:{n}: record fields must be {list(MANIFEST_FIELDS)}")
        task = TaskKind.parse(row["task"])
        for name in LABELS:
            if row[name] not in (0, 1):
                raise FormatError(f"{path}:{n}: label {name} must be 0 or 1")
            if row[name] and name not in APPLICABLE[task]:
                raise FormatError(f"{path}:{n}: label {name} does not apply to {task.value}")
        if row["id"] in seen:
            raise FormatError(f"{path}:{n}: duplicate recording id {row['id']!r}")
        seen.add(row["id"])
        rows.append(row)
    return rows


def label_matrix(rows):
    """(labels [N, 14] int8, applicable [N, 14] bool)."""
    y = np.array([[r[name] for name in LABELS] for r in rows], dtype=np.int8).reshape(len(rows), len(LABELS))
    mask = np.array([[name in APPLICABLE[TaskKind.parse(r["task"])] for name in LABELS] for r in rows], dtype=bool)
    return y, mask.reshape(len(rows), len(LABELS))


def speaker_disjoint_split(rows, train_fraction=0.8, seed=0):
    """Split recording ids at speaker granularity.  Returns (train_ids, test_ids)."""
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must lie strictly between 0 and 1")
    by_speaker = {}
    for r in rows:
        by_speaker.setdefault(r["speaker_id"], []).append(r["id"])
    speakers = sorted(by_speaker)
    if len(speakers) < 2:
        raise DataError(f"need at least 2 speakers for a disjoint split, got {len(speakers)}")
    order = np.random.default_rng(seed).permutation(len(speakers))
    target = train_fraction * len(rows)
    train, count = [], 0
    for i in order:
        sid = speakers[i]
        if len(train) == len(speakers) - 1:
            break
        if train and abs(count + len(by_speaker[sid]) - target) > abs(count - target):
            break
        train.append(sid)
        count += len(by_speaker[sid])
    train_set = set(train)
    train_ids = [r["id"] for r in rows if r["speaker_id"] in train_set]
    test_ids = [r["id"] for r in rows if r["speaker_id"] not in train_set]
    return train_ids, test_ids


def check_disjoint(rows, train_ids, test_ids):
    """Speakers shared by both sides (empty when the split is clean)."""
    spk = {r["id"]: r["speaker_id"] for r in rows}
    return sorted({spk[i] for i in train_ids} & {spk[i] for i in test_ids})
