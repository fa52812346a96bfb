from .analysis import analyze, measure, verify_attribute
from .corpus import (
    MANIFEST_FIELDS,
    CorpusSpec,
    gen_corpus,
    label_matrix,
    manifest_digest,
    plan_corpus,
    read_manifest,
    speaker_disjoint_split,
)
from .labels import APPLICABLE, LABELS, TaskKind, applicability_mask
from .render import SpeakerProfile, Take, inject_attribute, new_take, render, render_base
