"""
Seeded random streams.

Every random decision in a run draws from a stream derived from the run seed and
a tuple of keys (for example ``("judge", "refine", instance_id, round)``), so
results do not depend on the order in which concurrent calls are scheduled.
"""

import hashlib

import numpy as np


def _key_words(keys: tuple[object, ...]) -> list[int]:
    digest = hashlib.blake2b(
        "\x1f".join(repr(key) for key in keys).encode("utf-8"), digest_size=16
    ).digest()
    return [int.from_bytes(digest[i: i + 4], "little") for i in range(0, 16, 4)]


def derive_seed_sequence(seed: int, *keys: object) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    return np.random.SeedSequence([seed, *_key_words(keys)])


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    """
    Create an independent generator for the given seed and keys.
    :param seed: The run seed.
    :param keys: Any reprs-stable values identifying the stream.
    :return: A fresh numpy generator; equal inputs give bit-identical streams.
    """
    return np.random.default_rng(derive_seed_sequence(seed, *keys))


def sample_without_replacement(
        pool: list[int], size: int, rng: np.random.Generator
) -> list[int]:
    """Uniformly draw ``min(size, len(pool))`` distinct items, returned sorted."""
    take = min(size, len(pool))
    if take <= 0:
        return []
    chosen = rng.choice(len(pool), size=take, replace=False)
    return sorted(pool[int(i)] for i in chosen)
