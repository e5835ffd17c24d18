"""Deterministic stream factory for all randomness in the package.

Every random draw comes from a counter-based Philox generator keyed by
(base_seed, *tags).  Streams with distinct keys are statistically
independent, so replicates, clients, and the participation sampler never
share state.  Rebuilding a stream from the same key reproduces the same
draws bit-for-bit on every platform, which is what makes traces
replayable and safe to compute in parallel.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "tag_to_int"]


def tag_to_int(tag: str | int) -> int:
    """Map a stream tag to a stable unsigned 64-bit integer.

    Integers fold two's-complement style (seed entropy must be
    non-negative); strings are hashed (not with hash(), which is salted
    per process).
    """
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def substream(base_seed: int, *tags: str | int) -> np.random.Generator:
    """Create an independent generator keyed by (base_seed, *tags)."""
    entropy = [tag_to_int(base_seed)] + [tag_to_int(t) for t in tags]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
