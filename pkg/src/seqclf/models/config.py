from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from ..errors import ConfigurationError

ARCHITECTURES = ("class_latent", "transformer_pool", "perceiver_pool")
DEFAULT_SELF_BLOCKS = {"class_latent": 1, "transformer_pool": 2, "perceiver_pool": 1}


@dataclass
class ModelConfig:
    """Hyper-parameters for all three architectures.

    ``num_self_blocks`` means position-wise MLP blocks on the class latents for
    ``class_latent``, transformer blocks over frames for ``transformer_pool`` and
    latent self-attention blocks for ``perceiver_pool``.  ``None`` selects the
    per-architecture default (1, 2, 1).
    """

    architecture: str = "class_latent"
    input_dim: int = 128
    num_classes: int = 14
    latents_per_class: int = 4
    latent_dim: int = 256
    model_dim: int = 256
    heads: int = 4
    reduce_dim: int = 16
    num_self_blocks: int | None = None
    shared_latents: int = 56
    mlp_ratio: int = 2
    task_conditioning: str = "none"
    num_tasks: int = 3
    use_positions: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_self_blocks is None and self.architecture in DEFAULT_SELF_BLOCKS:
            self.num_self_blocks = DEFAULT_SELF_BLOCKS[self.architecture]
        self.validate()

    def validate(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.task_conditioning not in ("none", "embedding"):
            raise ConfigurationError(f"task_conditioning must be 'none' or 'embedding', got {self.task_conditioning!r}")
        for name in ("input_dim", "num_classes", "latents_per_class", "latent_dim", "model_dim", "heads",
                     "reduce_dim", "shared_latents", "mlp_ratio", "num_tasks"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_self_blocks < 0:
            raise ConfigurationError("num_self_blocks must be >= 0")
        if self.latent_dim % self.heads or self.model_dim % self.heads:
            raise ConfigurationError(
                f"heads={self.heads} must divide latent_dim={self.latent_dim} and model_dim={self.model_dim}"
            )
        if self.use_positions and self.model_dim % 2:
            raise ConfigurationError("sinusoidal positions need an even model_dim")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
