"""True ranks, sampled ranks, the binomial rank correction and rank weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import ContractError, FactorModel, score_all


class Correction(str, Enum):
    NONE = "none"
    CORRECTED = "corrected"


@dataclass(frozen=True)
class RankEstimate:
    sampled_rank: int
    m: int
    n: int
    p_hat: float
    estimated_rank: float


def true_rank(model: FactorModel, c: int, i: int) -> int:
    """1 + number of catalog items scored strictly above ``i`` for ``c``."""
    model.check_item(i)
    scores = score_all(model, c)
    return int(np.count_nonzero(scores > scores[i])) + 1


def sampled_rank(model: FactorModel, c: int, i: int, sample: Sequence[int]) -> int:
    """1 + number of entries of ``sample`` scored strictly above ``i``.

    Duplicates in ``sample`` each count.
    """
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise ContractError("sample must be nonempty")
    model.check_context(c)
    model.check_item(i)
    if sample.min() < 0 or sample.max() >= model.n_items:
        raise ContractError("sample contains out-of-range item ids")
    u = model.context_factors[c]
    s_i = np.dot(u, model.item_factors[i])
    s = np.array([np.dot(u, model.item_factors[j]) for j in sample])
    return int(np.count_nonzero(s > s_i)) + 1


def sampled_ranks(pos_scores: np.ndarray, sample_scores: np.ndarray) -> np.ndarray:
    """Row-wise sampled rank: ``pos_scores`` (r,) against ``sample_scores`` (r, m)."""
    return (sample_scores > pos_scores[:, None]).sum(axis=1) + 1


def estimate_ranks(sampled, m: int, n: int, correction=Correction.CORRECTED):
    """Full-catalog rank estimate 1 + (r~ - 1)/m * (n - 1), elementwise.

    With ``Correction.NONE`` the sampled rank is passed through unchanged.
    """
    sampled = np.asarray(sampled, dtype=np.float64)
    if Correction(correction) is Correction.NONE:
        return sampled
    return 1.0 + (sampled - 1.0) * (n - 1) / m


def correct_rank(sampled: int, m: int, n: int,
                 correction=Correction.CORRECTED) -> RankEstimate:
    if m < 1 or n < 2:
        raise ContractError("need m >= 1 and n >= 2")
    if not 1 <= sampled <= m + 1:
        raise ContractError(f"sampled rank {sampled} outside [1, {m + 1}]")
    p_hat = (sampled - 1) / m
    if Correction(correction) is Correction.NONE:
        est = float(sampled)
    else:
        est = 1.0 + p_hat * (n - 1)
    return RankEstimate(int(sampled), int(m), int(n), p_hat, est)


def ndcg_discount(rank: float) -> float:
    if not rank >= 1:
        raise ContractError(f"rank must be >= 1, got {rank}")
    return 1.0 / math.log2(rank + 1.0)


def warp_weight(rank: float) -> float:
    """Harmonic number of floor(rank)."""
    if not rank >= 1:
        raise ContractError(f"rank must be >= 1, got {rank}")
    return harmonic(int(math.floor(rank)))


def lambda_weight(rank_i: float, rank_j: float) -> float:
    return abs(ndcg_discount(rank_i) - ndcg_discount(rank_j))


_HARMONIC_CACHE = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, 1 << 16))])


def harmonic(r: int) -> float:
    if r < _HARMONIC_CACHE.size:
        return float(_HARMONIC_CACHE[r])
    # Asymptotic expansion; error < 1e-20 in this range.
    return math.log(r) + 0.5772156649015329 + 1 / (2 * r) - 1 / (12 * r * r)


# Array forms for the batched trainer.

def ndcg_discount_array(ranks: np.ndarray) -> np.ndarray:
    return 1.0 / np.log2(ranks + 1.0)


def warp_weight_array(ranks: np.ndarray) -> np.ndarray:
    r = np.floor(ranks).astype(np.int64)
    out = np.empty(r.shape, dtype=np.float64)
    small = r < _HARMONIC_CACHE.size
    out[small] = _HARMONIC_CACHE[r[small]]
    big = r[~small].astype(np.float64)
    out[~small] = np.log(big) + 0.5772156649015329 + 1 / (2 * big) - 1 / (12 * big * big)
    return out


def lambda_weight_array(ranks_i: np.ndarray, ranks_j: np.ndarray) -> np.ndarray:
    return np.abs(ndcg_discount_array(ranks_i) - ndcg_discount_array(ranks_j))
