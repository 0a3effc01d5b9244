"""Deterministic seed derivation for per-utterance randomness.

Every random draw in the toolkit comes from a numpy Generator seeded by
``derive_seed``, which mixes the global run seed with a stable hash of
(speaker, scope key, method). The derivation is bit-exact so utterances
can be processed in any order, on any worker count, with identical
results.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

_MASK64 = (1 << 64) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(global_seed: int, speaker_id: str, scope_key: str, method: str) -> int:
    """Mix the run seed with a stable identity hash.

    ``scope_key`` is the utterance id for per-utterance randomization and
    the empty string for per-speaker randomization.
    """
    tag = f"{speaker_id}|{scope_key}|{method}".encode("utf-8")
    return splitmix64((global_seed & _MASK64) ^ fnv1a64(tag))


def rng_for(global_seed: int, speaker_id: str, scope_key: str, method: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(global_seed, speaker_id, scope_key, method)))


def config_hash(config: object) -> str:
    """sha256 over the canonical JSON form of a config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
