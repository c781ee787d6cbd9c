"""Text conditioning: toy embedder, null embedding, classifier-free guidance.

The toy embedder maps whitespace tokens to fixed Gaussian vectors through a
seeded hash, so identical prompts embed identically across processes without
any pretrained encoder. Real encoders can be swapped in behind the same
``embed(prompt) -> TextEmbedding`` surface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .rng import derive_seed


@dataclass(frozen=True)
class TextEmbedding:
    """A fixed-length sequence of conditioning vectors."""

    tokens: Tensor  # (length, dim) float32
    is_null: bool = False

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class GuidanceConfig:
    p_drop: float = 0.1
    guidance_scale: float = 7.5

    def __post_init__(self):
        if not (0.0 <= self.p_drop <= 1.0):
            raise ValueError(f"p_drop must be in [0,1], got {self.p_drop}")
        if self.guidance_scale < 1.0:
            raise ValueError(f"guidance_scale must be >= 1, got {self.guidance_scale}")


class ToyTextEmbedder:
    """Deterministic hash-based embedder with a fixed token budget.

    Each distinct whitespace token owns one Gaussian vector drawn from a
    generator seeded by hash(build seed, token); prompts shorter than
    ``length`` are zero-padded, longer ones truncated.
    """

    kind = "toy"

    def __init__(self, dim: int = 64, length: int = 8, seed: int = 0):
        self.dim = dim
        self.length = length
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            gen = np.random.default_rng(derive_seed(self.seed, f"token:{token}"))
            vec = gen.standard_normal(self.dim).astype(np.float32)
            self._cache[token] = vec
        return vec

    def embed(self, prompt: str) -> TextEmbedding:
        words = prompt.split()
        if not words:
            raise ValueError("prompt must contain at least one token")
        out = np.zeros((self.length, self.dim), dtype=np.float32)
        for i, word in enumerate(words[: self.length]):
            out[i] = self._token_vector(word)
        return TextEmbedding(tokens=torch.from_numpy(out))

    def null(self) -> TextEmbedding:
        return TextEmbedding(
            tokens=torch.zeros(self.length, self.dim), is_null=True
        )

    def __call__(self, prompt: str) -> TextEmbedding:
        return self.embed(prompt)


def embed_text(prompt: str, dim: int = 64, length: int = 8, seed: int = 0) -> TextEmbedding:
    return ToyTextEmbedder(dim=dim, length=length, seed=seed).embed(prompt)


def null_like(emb: TextEmbedding) -> TextEmbedding:
    return TextEmbedding(tokens=torch.zeros_like(emb.tokens), is_null=True)


def cfg_dropout(emb: TextEmbedding, p_drop: float, rng: torch.Generator) -> TextEmbedding:
    """Replace the embedding with the null embedding with probability p_drop."""
    if not (0.0 <= p_drop <= 1.0):
        raise ValueError(f"p_drop must be in [0,1], got {p_drop}")
    if p_drop > 0 and float(torch.rand((), generator=rng)) < p_drop:
        return null_like(emb)
    return emb


def cfg_combine(uncond_pred: Tensor, cond_pred: Tensor, scale: float) -> Tensor:
    """uncond + scale * (cond - uncond); scale 1 returns cond exactly."""
    if uncond_pred.shape != cond_pred.shape:
        raise ValueError(
            f"shape mismatch: {tuple(uncond_pred.shape)} vs {tuple(cond_pred.shape)}"
        )
    if scale == 1.0:
        return cond_pred
    return uncond_pred + scale * (cond_pred - uncond_pred)
