"""Sequence classifiers over frame embeddings.

All three models share the same input path: a linear projection to
``model_dim``, sinusoidal positions, and (optionally) a learned task embedding
added to every frame.  They differ in how the variable-length sequence is
reduced to ``num_classes`` logits.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from ..errors import ConfigurationError, DimensionError
from ..nn import functional as F
from .config import ModelConfig


def factorized_projection(z, w1, b1, w2, b2):
    """Class-shared two-stage logit head.

    z: [..., C, L, d_l] -> ReLU(z @ w1 + b1): [..., C, L, d_r] -> flatten the
    (latent, feature) axes to L*d_r -> dot with w2 -> + b2, giving [..., C].
    """
    z = nn.as_tensor(z)
    *lead, C, L, d_l = z.shape
    if w1.shape[0] != d_l or w2.shape != (L * w1.shape[1],) or b1.shape != (w1.shape[1],):
        raise DimensionError(
            f"factorized projection shapes inconsistent: z {z.shape}, w1 {w1.shape}, b1 {b1.shape}, w2 {w2.shape}"
        )
    h = F.linear(z, w1, b1).relu()
    flat = h.reshape(*lead, C, L * w1.shape[1])
    return (flat @ w2.reshape(L * w1.shape[1], 1)).reshape(*lead, C) + b2


def predict(logits):
    """Binary decisions; logit >= 0 (probability >= 0.5) counts as positive."""
    z = logits.data if isinstance(logits, nn.Tensor) else np.asarray(logits)
    return (z >= 0).astype(np.int8)


def probabilities(logits):
    z = logits.data if isinstance(logits, nn.Tensor) else np.asarray(logits)
    return F.sigmoid(z)


def bce_loss(logits, labels, weights=None):
    return F.bce_with_logits(logits, labels, weights)


class SequenceClassifier(nn.Module):
    class_indexed = ()

    def __init__(self, config: ModelConfig, rng=None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.input_proj = nn.Linear(config.input_dim, config.model_dim, rng)
        if config.task_conditioning == "embedding":
            self.task_embedding = nn.normal_init(rng, (config.num_tasks, config.model_dim))
        else:
            self.task_embedding = None
        self._pos_cache = None

    @property
    def dtype(self):
        return self.input_proj.weight.data.dtype

    def _positions(self, T):
        cache = self._pos_cache
        if cache is None or cache.shape[0] < T or cache.dtype != self.dtype:
            cache = nn.sinusoidal_positions(max(T, 1024), self.config.model_dim, dtype=self.dtype)
            self._pos_cache = cache
        return cache.data[:T]

    def embed(self, x, task_ids=None):
        cfg = self.config
        if x.shape[-1] != cfg.input_dim:
            raise DimensionError(f"input dim {x.shape[-1]} does not match config input_dim {cfg.input_dim}")
        h = self.input_proj(x)
        if cfg.use_positions:
            h = h + nn.Tensor(self._positions(x.shape[-2]), dtype=self.dtype)
        if self.task_embedding is not None:
            if task_ids is None:
                raise ConfigurationError("task_conditioning='embedding' requires task ids")
            ids = np.asarray(task_ids, dtype=np.int64).reshape(-1)
            if ids.min() < 0 or ids.max() >= cfg.num_tasks:
                raise ConfigurationError(f"task id out of range [0, {cfg.num_tasks})")
            h = h + F.embedding(self.task_embedding, ids).reshape(len(ids), 1, cfg.model_dim)
        elif task_ids is not None:
            raise ConfigurationError("task ids given but task_conditioning is 'none'")
        return h

    def __call__(self, x, mask=None, task_ids=None):
        """Logits [B, C] for a batch [B, T, D], or [C] for a single sequence [T, D]."""
        if hasattr(x, "frames") and hasattr(x, "source_layer"):
            mask = x.mask if mask is None else mask
            x = x.frames
        x = nn.as_tensor(np.asarray(x.data if isinstance(x, nn.Tensor) else x, dtype=self.dtype))
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
            if mask is not None:
                mask = np.asarray(mask, dtype=bool).reshape(1, -1)
            if task_ids is not None:
                task_ids = np.asarray(task_ids).reshape(1)
        if x.ndim != 3:
            raise DimensionError(f"expected [B, T, D] or [T, D] input, got shape {x.shape}")
        if mask is None:
            mask = np.ones(x.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:2]:
            raise DimensionError(f"mask shape {mask.shape} does not match input {x.shape[:2]}")
        logits = self.forward(x, mask, task_ids)
        return logits.reshape(logits.shape[-1]) if single else logits

    def forward(self, x, mask, task_ids):
        raise NotImplementedError


class ClassLatentModel(SequenceClassifier):
    """Per-class latent queries over shared cross-attention, factorized logit head.

    Only ``latents`` carries a class axis; attention, MLP and projection
    weights are shared by every class.
    """

    class_indexed = ("latents",)

    def __init__(self, config: ModelConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        super().__init__(config, rng)
        c = config
        self.latents = nn.normal_init(rng, (c.num_classes, c.latents_per_class, c.latent_dim))
        self.cross = nn.AttentionBlock(c.latent_dim, c.model_dim, c.heads, 0, rng, with_mlp=False)
        self.blocks = [nn.FeedForwardBlock(c.latent_dim, c.mlp_ratio * c.latent_dim, rng) for _ in range(c.num_self_blocks)]
        self.w1 = nn.xavier_uniform(rng, c.latent_dim, c.reduce_dim)
        self.b1 = nn.Parameter(np.zeros(c.reduce_dim))
        fan = c.latents_per_class * c.reduce_dim
        a = np.sqrt(6.0 / (fan + 1))
        self.w2 = nn.Parameter(rng.uniform(-a, a, size=fan))
        self.b2 = nn.Parameter(np.zeros(()))

    def latent_states(self, x, mask, task_ids=None):
        c = self.config
        h = self.embed(x, task_ids)
        q = self.latents.reshape(c.num_classes * c.latents_per_class, c.latent_dim)
        z = self.cross(q, h, mask)
        for block in self.blocks:
            z = block(z)
        return z.reshape(x.shape[0], c.num_classes, c.latents_per_class, c.latent_dim)

    def forward(self, x, mask, task_ids):
        z = self.latent_states(x, mask, task_ids)
        return factorized_projection(z, self.w1, self.b1, self.w2, self.b2)


class TransformerPoolModel(SequenceClassifier):
    """Self-attention blocks over frames, masked mean over time, dense head."""

    def __init__(self, config: ModelConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        super().__init__(config, rng)
        c = config
        self.blocks = [
            nn.AttentionBlock(c.model_dim, c.model_dim, c.heads, c.mlp_ratio * c.model_dim, rng)
            for _ in range(c.num_self_blocks)
        ]
        self.head = nn.Linear(c.model_dim, c.num_classes, rng)

    def forward(self, x, mask, task_ids):
        h = self.embed(x, task_ids)
        for block in self.blocks:
            h = block(h, h, mask)
        return self.head(F.masked_mean(h, mask, axis=-2))


class PerceiverPoolModel(SequenceClassifier):
    """One shared latent array, cross-attention, latent self-attention, mean over latents."""

    def __init__(self, config: ModelConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        super().__init__(config, rng)
        c = config
        self.latents = nn.normal_init(rng, (c.shared_latents, c.latent_dim))
        self.cross = nn.AttentionBlock(c.latent_dim, c.model_dim, c.heads, c.mlp_ratio * c.latent_dim, rng)
        self.blocks = [
            nn.AttentionBlock(c.latent_dim, c.latent_dim, c.heads, c.mlp_ratio * c.latent_dim, rng)
            for _ in range(c.num_self_blocks)
        ]
        self.head = nn.Linear(c.latent_dim, c.num_classes, rng)

    def latent_states(self, x, mask, task_ids=None):
        h = self.embed(x, task_ids)
        z = self.cross(self.latents, h, mask)
        for block in self.blocks:
            z = block(z, z)
        return z

    def forward(self, x, mask, task_ids):
        return self.head(self.latent_states(x, mask, task_ids).mean(axis=-2))


MODELS = {
    "class_latent": ClassLatentModel,
    "transformer_pool": TransformerPoolModel,
    "perceiver_pool": PerceiverPoolModel,
}


def build_model(config: ModelConfig, rng=None):
    return MODELS[config.architecture](config, rng)
