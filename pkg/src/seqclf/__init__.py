"""Sequence classification with class-specific latent cross-attention."""

__version__ = "0.1.0"
