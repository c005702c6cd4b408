"""Recall@k / NDCG@k on held-out interactions, averaged over users."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, Sequence

import numpy as np

from .core import FactorModel, InteractionSet

logger = logging.getLogger(__name__)

TUNING = "tuning"
TEST = "test"
DEFAULT_CUTOFFS = {"recall": (20, 50), "ndcg": (100,)}


@dataclass
class EvalSplit:
    """Training entries plus per-user holdouts for the evaluation users.

    ``holdout`` maps user id -> sorted array of held-out item ids;
    ``partition`` maps the same user ids to ``"tuning"`` or ``"test"``.
    """

    train: InteractionSet
    holdout: Dict[int, np.ndarray]
    partition: Dict[int, str]

    @property
    def n_items(self) -> int:
        return self.train.n_items

    @property
    def n_users(self) -> int:
        return self.train.n_contexts

    def users(self, partition: str) -> list:
        return sorted(u for u, p in self.partition.items() if p == partition)

    def check(self) -> None:
        tuning, test = self.users(TUNING), self.users(TEST)
        if abs(len(tuning) - len(test)) > 1:
            raise ValueError("tuning and test partitions differ by more than one user")
        for u, held in self.holdout.items():
            train_items = self.train.items_of(u)
            if held.size == 0 or train_items.size == 0:
                raise ValueError(f"user {u} lacks training or holdout items")
            if np.intersect1d(held, train_items).size:
                raise ValueError(f"user {u} has items in both train and holdout")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalSplit):
            return NotImplemented
        return (
            self.train == other.train
            and self.partition == other.partition
            and self.holdout.keys() == other.holdout.keys()
            and all(np.array_equal(self.holdout[u], other.holdout[u]) for u in self.holdout)
        )


@dataclass
class EvalReport:
    partition: str
    n_users: int
    recall: Dict[int, float] = field(default_factory=dict)
    ndcg: Dict[int, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def recall20(self) -> float:
        return self.recall[20]

    @property
    def recall50(self) -> float:
        return self.recall[50]

    @property
    def ndcg100(self) -> float:
        return self.ndcg[100]

    def flat(self) -> dict:
        out = {f"recall{k}": v for k, v in self.recall.items()}
        out.update({f"ndcg{k}": v for k, v in self.ndcg.items()})
        return out

    def to_text(self) -> str:
        lines = [f"partition={self.partition}", f"n_users={self.n_users}"]
        lines += [f"{k}={v!r}" for k, v in self.flat().items()]
        lines += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)


def recall_at_k(ranked_items: Sequence[int], holdout, k: int) -> float:
    """|top-k ∩ holdout| / min(k, |holdout|)."""
    holdout = set(np.asarray(holdout).tolist())
    if not holdout:
        raise ValueError("empty holdout")
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for item in list(ranked_items)[:k] if item in holdout)
    return hits / min(k, len(holdout))


_DISCOUNT = 1.0 / np.log2(np.arange(2, 100_002))


def _discounts(n: int) -> np.ndarray:
    if n <= _DISCOUNT.size:
        return _DISCOUNT[:n]
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(ranked_items: Sequence[int], holdout, k: int) -> float:
    """Binary-gain NDCG with discount 1/log2(position + 1)."""
    holdout = set(np.asarray(holdout).tolist())
    if not holdout:
        raise ValueError("empty holdout")
    if k < 1:
        raise ValueError("k must be >= 1")
    top = list(ranked_items)[:k]
    disc = _discounts(k)
    dcg = math.fsum(disc[p] for p, item in enumerate(top) if item in holdout)
    idcg = math.fsum(disc[:min(k, len(holdout))])
    return dcg / idcg


def rank_items(scores: np.ndarray, exclude=()) -> np.ndarray:
    """Item ids by descending score, ties by ascending id, ``exclude`` dropped."""
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order


def evaluate(model: FactorModel, split: EvalSplit, partition: str = TEST,
             recall_cutoffs: Iterable[int] = (20, 50),
             ndcg_cutoffs: Iterable[int] = (100,),
             scores: np.ndarray | None = None) -> EvalReport:
    """Unweighted per-user means of Recall@k and NDCG@k over ``partition``.

    Each user's training items are removed before ranking.  ``scores`` may
    supply a precomputed users x items score matrix.
    """
    if model.n_contexts < split.n_users or model.n_items < split.n_items:
        raise ValueError("model does not cover the split's users and items")
    recall_cutoffs = tuple(recall_cutoffs)
    ndcg_cutoffs = tuple(ndcg_cutoffs)
    depth = max(recall_cutoffs + ndcg_cutoffs)
    users = split.users(partition)
    rec = {k: [] for k in recall_cutoffs}
    nd = {k: [] for k in ndcg_cutoffs}
    disc = _discounts(depth)
    n_used = 0
    for u in users:
        held = split.holdout[u]
        if held.size == 0:
            logger.warning("user %d has an empty holdout; skipped", u)
            continue
        s = scores[u] if scores is not None else model.item_factors @ model.context_factors[u]
        ranked = rank_items(np.asarray(s, dtype=np.float64), split.train.items_of(u))[:depth]
        hit = np.isin(ranked, held)
        n_used += 1
        for k in recall_cutoffs:
            rec[k].append(int(hit[:k].sum()) / min(k, held.size))
        for k in ndcg_cutoffs:
            h = hit[:k]
            dcg = math.fsum(disc[:h.size][h])
            nd[k].append(dcg / math.fsum(disc[:min(k, held.size)]))
    mean = lambda xs: math.fsum(xs) / len(xs) if xs else 0.0  # noqa: E731
    return EvalReport(
        partition=partition,
        n_users=n_used,
        recall={k: mean(v) for k, v in rec.items()},
        ndcg={k: mean(v) for k, v in nd.items()},
    )
