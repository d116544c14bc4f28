"""Deterministic RNG stream derivation.

Every stochastic operation in this package takes an explicit numpy Generator.
Parallel work units (payoff-table entries, bootstrap replicates, episodes)
derive their own independent stream from a master seed and a structural key,
so results never depend on scheduling or worker count.
"""

from __future__ import annotations

import math

import numpy as np


def child_rng(master_seed: int, *key: int) -> np.random.Generator:
    """Independent Generator for the work unit identified by ``key``.

    The same (master_seed, key) always yields the same stream, regardless of
    how many other streams were derived before it.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def gumbel(rng: np.random.Generator, size: int) -> np.ndarray:
    """Sample standard Gumbel(0) noise via the inverse CDF -log(-log(u)).

    u is clamped away from {0, 1} so the transform stays finite; the clamp
    removes ~1e-300 of probability mass.
    """
    u = rng.random(size)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return -np.log(-np.log(u))


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Draw an index from a probability vector using a single uniform draw.

    Cheaper than Generator.choice for the per-move hot path, and consumes
    exactly one stream value per call.
    """
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def log_clamped(p: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Elementwise log with probabilities clamped below at ``floor``.

    Policy providers may emit exact zeros; logits must stay finite.
    """
    return np.log(np.maximum(p, floor))


def entropy_nats(probs: np.ndarray) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    total = 0.0
    for p in np.asarray(probs, dtype=float):
        if p > 0.0:
            total -= p * math.log(p)
    return total
