"""Seeded samplers: positive batches, uniform negatives and WARP rejection.

Every random stream is a numpy ``Generator`` over the Philox-4x64 counter-based
bit generator, keyed by a 64-bit value.  Stream ``s`` of master seed ``m`` uses
key ``stream_seed(m, s)``:

    stream_seed(m, s) = splitmix64((m + GOLDEN * (s + 1)) mod 2**64)

with ``GOLDEN = 0x9E3779B97F4A7C15``.  Shard 0 is the main training stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import ContractError, FactorModel, InteractionSet
from .losses import LossKind, pair_loss

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_seed(master_seed: int, shard: int = 0) -> int:
    return splitmix64((int(master_seed) + GOLDEN * (int(shard) + 1)) & MASK64)


def make_rng(master_seed: int, shard: int = 0) -> np.random.Generator:
    if not 0 <= int(master_seed) <= MASK64:
        raise ContractError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.Philox(key=stream_seed(master_seed, shard)))


class Replacement(str, Enum):
    WITH = "with"
    WITHOUT = "without"


@dataclass(frozen=True)
class SampledBatch:
    contexts: np.ndarray
    items: np.ndarray
    negatives: np.ndarray
    replacement: Replacement = Replacement.WITH

    @property
    def k(self) -> int:
        return int(self.items.size)

    @property
    def m(self) -> int:
        return int(self.negatives.size)


@dataclass(frozen=True)
class RejectionOutcome:
    """``item`` is None when the sampler gave up after ``trials`` draws."""

    item: Optional[int]
    trials: int

    @property
    def accepted(self) -> bool:
        return self.item is not None


def sample_positive_batch(data: InteractionSet, k: int, rng: np.random.Generator):
    """Draw ``k`` entries of ``data`` uniformly with replacement.

    Returns ``(contexts, items)`` as two int64 arrays of length ``k``.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    if len(data) == 0:
        raise ContractError("cannot sample from an empty interaction set")
    idx = rng.integers(0, len(data), size=k)
    return data.contexts[idx], data.items[idx]


def sample_negative_items(n: int, m: int, rng: np.random.Generator,
                          mode: Replacement = Replacement.WITH) -> np.ndarray:
    if m < 1 or n < 1:
        raise ContractError("n and m must be >= 1")
    mode = Replacement(mode)
    if mode is Replacement.WITH:
        return rng.integers(0, n, size=m)
    if m > n:
        raise ContractError(f"cannot draw {m} distinct items from {n}")
    return rng.choice(n, size=m, replace=False)


def sample_batch(data: InteractionSet, n_items: int, k: int, m: int,
                 rng: np.random.Generator,
                 mode: Replacement = Replacement.WITH) -> SampledBatch:
    contexts, items = sample_positive_batch(data, k, rng)
    negatives = sample_negative_items(n_items, m, rng, mode)
    return SampledBatch(contexts, items, negatives, Replacement(mode))


def draw_other_item(n: int, i: int, rng: np.random.Generator) -> int:
    """Uniform draw from {0..n-1} \\ {i}; resamples on collision."""
    while True:
        j = int(rng.integers(0, n))
        if j != i:
            return j


def warp_rejection_sample(model: FactorModel, c: int, i: int, loss: LossKind,
                          max_trials: int, rng: np.random.Generator) -> RejectionOutcome:
    """Draw candidates until one has positive pairwise loss against ``i``."""
    if max_trials < 1:
        raise ContractError("max_trials must be >= 1")
    model.check_context(c)
    model.check_item(i)
    u = model.context_factors[c]
    s_i = float(np.dot(u, model.item_factors[i]))
    n = model.n_items
    for trial in range(1, max_trials + 1):
        j = draw_other_item(n, i, rng)
        s_j = float(np.dot(u, model.item_factors[j]))
        if pair_loss(loss, s_i, s_j) > 0.0:
            return RejectionOutcome(j, trial)
    return RejectionOutcome(None, max_trials)


def warp_rank_from_trials(n: int, trials: int) -> int:
    """WSABIE rank estimate: floor((n - 1) / trials), at least 1."""
    if n < 2 or trials < 1:
        raise ContractError("need n >= 2 and trials >= 1")
    return max(1, (n - 1) // trials)


def full_negatives(n: int, exclude: Sequence[int] = ()) -> np.ndarray:
    """Every item id except ``exclude``; used to emulate exhaustive sampling."""
    mask = np.ones(n, dtype=bool)
    mask[list(exclude)] = False
    return np.flatnonzero(mask)
