"""Task kinds, the 14 attribute labels and which labels each task can carry."""

from __future__ import annotations

from enum import Enum

from ..errors import ConfigurationError


class TaskKind(str, Enum):
    VP = "VP"  # sustained vowel
    AMR = "AMR"  # "puh puh puh"
    SMR = "SMR"  # "puh tuh kuh"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"unknown task {value!r}; expected one of VP, AMR, SMR") from None


TASK_INDEX = {TaskKind.VP: 0, TaskKind.AMR: 1, TaskKind.SMR: 2}

# canonical order; manifests, label vectors and reports all follow it
LABELS = (
    "abnormal_loudness_variability",
    "abnormal_pitch_variability",
    "breathy",
    "distortions",
    "flutter",
    "hoarse_harsh",
    "irregular_articulatory_breakdowns",
    "loudness_decay",
    "rapid_rate",
    "slow_rate",
    "strained",
    "syllable_segmentation",
    "tremor",
    "unsteady",
)
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

_PHONATORY_SHARED = {"abnormal_loudness_variability", "breathy", "loudness_decay", "strained"}
_VP_ONLY = {"abnormal_pitch_variability", "flutter", "hoarse_harsh", "tremor", "unsteady"}
_SYLLABIC = {
    "distortions",
    "irregular_articulatory_breakdowns",
    "rapid_rate",
    "slow_rate",
    "syllable_segmentation",
}

APPLICABLE = {
    TaskKind.VP: frozenset(_PHONATORY_SHARED | _VP_ONLY),
    TaskKind.AMR: frozenset(_PHONATORY_SHARED | _SYLLABIC),
    TaskKind.SMR: frozenset(_PHONATORY_SHARED | _SYLLABIC),
}

EXCLUSIVE = (("rapid_rate", "slow_rate"),)


def applicable(task, label):
    return label in APPLICABLE[TaskKind.parse(task)]


def applicability_mask(task):
    """Boolean vector over LABELS."""
    allowed = APPLICABLE[TaskKind.parse(task)]
    return [name in allowed for name in LABELS]


def check_label(name):
    if name not in LABEL_INDEX:
        raise ConfigurationError(f"unknown attribute {name!r}")
    return name


def shared_labels(a, b):
    sa, sb = APPLICABLE[TaskKind.parse(a)], APPLICABLE[TaskKind.parse(b)]
    return [name for name in LABELS if name in sa and name in sb]
