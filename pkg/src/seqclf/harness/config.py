"""Training configuration, key=value config files and SEQCLF_ environment overrides.

Precedence, lowest first: dataclass defaults, config file, environment, flags.
"""

from __future__ import annotations

import hashlib
import json
import os
import typing
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigurationError
from ..models import ARCHITECTURES, ModelConfig
from ..synth.labels import TaskKind

ENV_PREFIX = "SEQCLF_"
MODEL_KEYS = ("architecture", "model_dim", "latent_dim", "heads", "latents_per_class", "reduce_dim",
              "num_self_blocks", "shared_latents", "mlp_ratio", "task_conditioning", "use_positions")


@dataclass
class TrainConfig:
    architecture: str = "class_latent"
    model_dim: int = 64
    latent_dim: int = 64
    heads: int = 4
    latents_per_class: int = 4
    reduce_dim: int = 8
    num_self_blocks: int = -1  # -1 picks the architecture default
    shared_latents: int = 56
    mlp_ratio: int = 2
    task_conditioning: str = "embedding"
    use_positions: bool = True
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_schedule: str = "cosine"  # cosine (decays to zero over the epoch budget) | constant
    batch_size: int = 16
    epochs: int = 60
    patience: int = 20
    early_stop_metric: str = "loss"  # loss | accuracy, on the validation speakers
    seed: int = 0
    input_source: str = "logmel"  # logmel | layer:<k>
    frame_stride: int = 4  # mean-pool this many consecutive frames before the model
    normalization: str = "zscore"  # zscore (training-split statistics) | none
    task_pooling: str = "pooled"  # pooled | single
    tasks: str = "VP,AMR,SMR"
    val_fraction: float = 0.1
    train_fraction: float = 0.8
    split_seed: int = 0
    shuffle_labels: bool = False  # negative control

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.patience < 1 or self.frame_stride < 1:
            raise ConfigurationError("lr, batch_size, epochs, patience and frame_stride must be positive")
        if not 0 <= self.val_fraction < 1 or not 0 < self.train_fraction < 1:
            raise ConfigurationError("val_fraction must lie in [0, 1) and train_fraction in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if self.early_stop_metric not in ("accuracy", "loss"):
            raise ConfigurationError(f"early_stop_metric must be 'accuracy' or 'loss', got {self.early_stop_metric!r}")
        if self.normalization not in ("zscore", "none"):
            raise ConfigurationError(f"normalization must be 'zscore' or 'none', got {self.normalization!r}")
        if self.task_pooling not in ("pooled", "single"):
            raise ConfigurationError(f"task_pooling must be 'pooled' or 'single', got {self.task_pooling!r}")
        tasks = self.task_list()
        if self.task_pooling == "single" and len(tasks) != 1:
            raise ConfigurationError("task_pooling=single needs exactly one entry in tasks")
        self.source_layer()
        self.model_config(128)

    def task_list(self):
        out = [TaskKind.parse(t.strip()) for t in str(self.tasks).split(",") if t.strip()]
        if not out:
            raise ConfigurationError("tasks must name at least one of VP, AMR, SMR")
        return out

    def source_layer(self):
        """-1 for log-mel, otherwise the encoder layer index."""
        src = str(self.input_source)
        if src == "logmel":
            return -1
        if src.startswith("layer:"):
            try:
                k = int(src.split(":", 1)[1])
            except ValueError:
                k = None
            if k is not None and 0 <= k <= 31:
                return k
        raise ConfigurationError(f"input_source must be 'logmel' or 'layer:<0..31>', got {src!r}")

    def model_config(self, input_dim):
        kw = {k: getattr(self, k) for k in MODEL_KEYS}
        kw["num_self_blocks"] = None if self.num_self_blocks < 0 else self.num_self_blocks
        return ModelConfig(input_dim=input_dim, seed=self.seed, **kw)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def updated(self, **kw):
        return replace(self, **kw)


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def coerce(value, kind, key="value"):
    """Convert a config string to ``kind`` (bool, int, float or str)."""
    if not isinstance(value, str):
        return value
    v = value.strip()
    try:
        if kind is bool:
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if kind is int:
            return int(v)
        if kind is float:
            return float(v)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot read {value!r} as {kind.__name__}") from None
    return v


def read_config_file(path):
    """Parse ``key = value`` lines; '#' starts a comment.  Returns an ordered dict of strings."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def env_overrides(keys, environ=None):
    environ = os.environ if environ is None else environ
    return {k: environ[ENV_PREFIX + k.upper()] for k in keys if ENV_PREFIX + k.upper() in environ}


def resolve(defaults, types, file_values=None, env=None, flags=None):
    """Merge layers into one typed dict.  Unknown keys in the file are an error."""
    out = dict(defaults)
    for layer in (file_values or {}, env or {}, flags or {}):
        for k, v in layer.items():
            if v is None:
                continue
            if k not in types:
                raise ConfigurationError(f"unknown config key {k!r}")
            out[k] = coerce(v, types[k], k)
    return out


def train_config_from(values):
    types = _field_types(TrainConfig)
    kw = {k: coerce(v, types[k], k) for k, v in values.items() if k in types}
    return TrainConfig(**kw)


TRAIN_TYPES = _field_types(TrainConfig)
TRAIN_DEFAULTS = TrainConfig().to_dict()


def dump_config(values):
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
