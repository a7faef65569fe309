"""Deterministic noise streams built on counter-based Philox keys.

Each (master_seed, replicate_index) pair maps to a distinct 128-bit Philox
key, so distinct streams are independent by construction and the mapping is
injective (no hashing involved).  Replicate indices are packed from a
(purpose, eps_index, replicate) triple so that the streams used for paths,
limit-law samples and property checks can never collide within one
experiment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# bit layout of the packed replicate index: [purpose:8][eps_index:16][replicate:40]
_REPLICATE_BITS = 40
_EPS_BITS = 16
_PURPOSE_BITS = 8

PURPOSE_WIENER = 1
PURPOSE_LIMIT_LAW = 2
PURPOSE_PROPERTY = 3
PURPOSE_CURVE = 4


def pack_stream_index(purpose: int, eps_index: int, replicate: int) -> int:
    """Injective packing of (purpose, eps_index, replicate) into one integer."""
    if not 0 <= purpose < (1 << _PURPOSE_BITS):
        raise ValueError(f"purpose {purpose} out of range")
    if not 0 <= eps_index < (1 << _EPS_BITS):
        raise ValueError(f"eps_index {eps_index} out of range")
    if not 0 <= replicate < (1 << _REPLICATE_BITS):
        raise ValueError(f"replicate {replicate} out of range")
    return (purpose << (_EPS_BITS + _REPLICATE_BITS)) | (eps_index << _REPLICATE_BITS) | replicate


def unpack_stream_index(packed: int) -> tuple[int, int, int]:
    replicate = packed & ((1 << _REPLICATE_BITS) - 1)
    eps_index = (packed >> _REPLICATE_BITS) & ((1 << _EPS_BITS) - 1)
    purpose = packed >> (_EPS_BITS + _REPLICATE_BITS)
    return purpose, eps_index, replicate


@dataclass(frozen=True)
class NoiseStream:
    """Handle for one reproducible random stream.

    Identical (master_seed, replicate_index) pairs reproduce bit-identical
    draws regardless of batching or process placement.
    """

    master_seed: int
    replicate_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must fit in an unsigned 64-bit word")
        if not 0 <= self.replicate_index < 2 ** 64:
            raise ValueError("replicate_index must fit in an unsigned 64-bit word")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.replicate_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "NoiseStream":
        return NoiseStream(self.master_seed, self.replicate_index + offset)
