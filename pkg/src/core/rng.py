"""Keyed random streams.

Every generator is derived from ``(seed, domain, index...)`` through numpy's
``SeedSequence`` spawn keys, so the draws for a given key never depend on which
worker asks for them or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DATA_DOMAIN = 0
GCV_DOMAIN = 1


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """Return the generator addressed by ``key`` under ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if any(int(part) < 0 for part in key):
        raise ValueError(f"stream key parts must be non-negative, got {key}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(part) for part in key))
    return np.random.default_rng(sequence)


@dataclass(frozen=True)
class KeyedStreams:
    """Stream family for one simulation: stream 0 is Study A, stream t+1 is iteration t."""

    seed: int

    def study_a(self) -> np.random.Generator:
        return keyed_rng(self.seed, DATA_DOMAIN, 0)

    def iteration(self, index: int) -> np.random.Generator:
        return keyed_rng(self.seed, DATA_DOMAIN, index + 1)

    def gcv(self, iteration: int, attempt: int = 0) -> np.random.Generator:
        return keyed_rng(self.seed, GCV_DOMAIN, iteration, attempt)


__all__ = ["DATA_DOMAIN", "GCV_DOMAIN", "KeyedStreams", "keyed_rng"]
