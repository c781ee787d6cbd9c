"""Deterministic RNG stream splitting.

Every source of randomness in the project is an explicit generator handle
derived from one global seed. Streams are addressed by name, so adding or
reordering stages never shifts the randomness consumed by another stage.
"""
from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(seed: int, name: str) -> int:
    """Hash (seed, name) into a stable 63-bit child seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


class RngStreams:
    """Named substreams of a single global seed.

    ``streams.torch("keyframe/sample")`` always yields a generator seeded
    identically for the same global seed, independent of what other streams
    were requested before it.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def child_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    def torch(self, name: str) -> torch.Generator:
        gen = torch.Generator()
        gen.manual_seed(self.child_seed(name))
        return gen

    def numpy(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.child_seed(name))


def seeded_torch(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen
