"""Iterative (one pair per step) and sampled-batch WARP / LambdaRank trainers."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import ContractError, FactorModel, InteractionSet, init_model
from .losses import LossKind, loss_slope_array, pair_gradient, pair_loss, pair_loss_array
from .ranking import (
    Correction,
    estimate_ranks,
    lambda_weight,
    lambda_weight_array,
    warp_weight,
    warp_weight_array,
)
from .sampling import (
    Replacement,
    SampledBatch,
    draw_other_item,
    make_rng,
    sample_batch,
    warp_rank_from_trials,
    warp_rejection_sample,
)

logger = logging.getLogger(__name__)

TRAIN_STREAM = 1


class Algorithm(str, Enum):
    ITERATIVE = "iterative"
    BATCHED = "batched"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss: LossKind = LossKind.LOGISTIC_LAMBDA
    algorithm: Algorithm = Algorithm.BATCHED
    correction: Correction = Correction.CORRECTED
    k: int = 32
    m: int = 64
    eta: float = 0.05
    reg: float = 0.0
    dim: int = 16
    epochs: int = 20
    max_trials: int = 100
    seed: int = 0
    replacement: Replacement = Replacement.WITH
    eval_every: int = 1
    early_stop_patience: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        self.algorithm = Algorithm(self.algorithm)
        self.correction = Correction(self.correction)
        self.replacement = Replacement(self.replacement)
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be finite and >= 0")
        if self.reg < 0:
            raise ValueError("reg (L2 coefficient) must be >= 0")
        if self.k < 1 or self.m < 1 or self.epochs < 1 or self.dim < 1:
            raise ValueError("k, m, epochs and dim must be >= 1")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (v.value if isinstance(v, Enum) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainReport:
    epoch_loss: List[float] = field(default_factory=list)
    epoch_wall_ms: List[float] = field(default_factory=list)
    evaluations: List[dict] = field(default_factory=list)
    model: Optional[FactorModel] = None
    best_epoch: Optional[int] = None
    stop_reason: str = "epochs"
    discarded_steps: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_loss)


@dataclass
class SparseGradient:
    """Summed gradient over unique touched rows (row ids ascending)."""

    context_rows: np.ndarray
    context_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "SparseGradient":
        z = np.zeros((0, dim))
        e = np.zeros(0, dtype=np.int64)
        return cls(e, z, e.copy(), z.copy())

    @classmethod
    def from_rows(cls, ctx_rows, ctx_grads, item_rows, item_grads) -> "SparseGradient":
        cr, cg = _reduce_rows(np.asarray(ctx_rows), np.asarray(ctx_grads))
        ir, ig = _reduce_rows(np.asarray(item_rows), np.asarray(item_grads))
        return cls(cr, cg, ir, ig)


def _reduce_rows(rows: np.ndarray, grads: np.ndarray):
    uniq, inv = np.unique(rows, return_inverse=True)
    out = np.zeros((uniq.size, grads.shape[1]), dtype=np.float64)
    np.add.at(out, inv.ravel(), grads)  # sequential in input order
    return uniq, out


def apply_step(model: FactorModel, grad: SparseGradient, eta: float, reg: float = 0.0) -> None:
    """row <- row - eta * (grad_row + reg * row) for every touched row."""
    if not (np.isfinite(grad.context_grad).all() and np.isfinite(grad.item_grad).all()):
        bad_c = grad.context_rows[~np.isfinite(grad.context_grad).all(axis=1)]
        bad_i = grad.item_rows[~np.isfinite(grad.item_grad).all(axis=1)]
        raise TrainingDiverged(
            f"non-finite gradient (context rows {bad_c.tolist()}, item rows {bad_i.tolist()})")
    if grad.context_rows.size:
        rows = model.context_factors[grad.context_rows]
        model.context_factors[grad.context_rows] = rows - eta * (grad.context_grad + reg * rows)
    if grad.item_rows.size:
        rows = model.item_factors[grad.item_rows]
        model.item_factors[grad.item_rows] = rows - eta * (grad.item_grad + reg * rows)


def early_stop(history: Sequence[float], patience: int) -> bool:
    """True once the best value is ``patience`` or more evaluations old."""
    if not history:
        raise ValueError("empty history")
    if patience <= 0:
        return False
    best = int(np.argmax(history))
    return len(history) - 1 - best >= patience


# ---------------------------------------------------------------------------
# batched step


@dataclass
class BatchTerms:
    """Intermediate quantities of one sampled-batch step (k x m layout)."""

    pos_sampled_rank: np.ndarray
    pos_rank: np.ndarray
    neg_sampled_rank: Optional[np.ndarray]
    neg_rank: Optional[np.ndarray]
    alpha: np.ndarray
    valid: np.ndarray
    loss: np.ndarray
    weight: np.ndarray  # alpha * dl/d(s_i - s_j), zero on invalid pairs


def _greater_counts(scores: np.ndarray) -> np.ndarray:
    """For each (a, b): #{l : scores[a, l] > scores[a, b]}."""
    # "max" rank = number of entries <= the value, ties included
    return scores.shape[1] - rankdata(scores, method="max", axis=1).astype(np.int64)


def batch_terms(model: FactorModel, contexts: np.ndarray, items: np.ndarray,
                negatives: np.ndarray, loss: LossKind, correction: Correction,
                n_items: Optional[int] = None) -> BatchTerms:
    """Ranks, weights and loss slopes for every (positive, negative) pair.

    The positive's rank is its sampled rank against all m negatives.  For
    LambdaRank, negative j's rank counts the positive exactly (it is known,
    not sampled) plus the other m - 1 negatives scored above j.  With
    ``Correction.CORRECTED`` the sampled counts are scaled to the catalog:
    m negatives stand for the n - 1 items other than i, and m - 1 other
    negatives stand for the n - 2 items other than i and j.  Pairs with
    j == i carry zero weight.
    """
    loss, correction = LossKind(loss), Correction(correction)
    n = model.n_items if n_items is None else n_items
    m = negatives.size
    U = model.context_factors[contexts].astype(np.float64)
    Vp = model.item_factors[items].astype(np.float64)
    Vn = model.item_factors[negatives].astype(np.float64)
    s_pos = np.einsum("kd,kd->k", U, Vp)
    S = U @ Vn.T
    valid = negatives[None, :] != items[:, None]
    diff = s_pos[:, None] - S

    # copies of i inside the sample are not negatives for that positive
    m_valid = valid.sum(axis=1)
    r_pos = ((S > s_pos[:, None]) & valid).sum(axis=1) + 1
    pos_rank = np.where(m_valid > 0,
                        estimate_ranks(r_pos, np.maximum(m_valid, 1), n, correction), 1.0)
    if loss is LossKind.HINGE_WARP:
        r_neg = neg_rank = None
        alpha = np.broadcast_to(warp_weight_array(pos_rank)[:, None], S.shape)
    else:
        pos_above = (s_pos[:, None] > S) & valid
        others_above = _greater_counts(np.where(valid, S, -np.inf))
        r_neg = 1 + pos_above + others_above
        n_others = (m_valid - 1)[:, None]
        if correction is Correction.CORRECTED:
            scaled = others_above * (n - 2) / np.maximum(n_others, 1)
            neg_rank = 1.0 + pos_above + np.where(n_others > 0, scaled, 0.0)
        else:
            neg_rank = r_neg.astype(np.float64)
        alpha = lambda_weight_array(pos_rank[:, None], neg_rank)
    weight = np.where(valid, alpha * loss_slope_array(loss, diff), 0.0)
    return BatchTerms(r_pos, pos_rank, r_neg, neg_rank, np.asarray(alpha), valid,
                      pair_loss_array(loss, diff), weight)


def batch_gradient(model: FactorModel, contexts, items, negatives,
                   terms: BatchTerms) -> SparseGradient:
    """Sum of alpha * dl/dtheta over all k x m pairs, reduced positives-major."""
    U = model.context_factors[contexts].astype(np.float64)
    Vp = model.item_factors[items].astype(np.float64)
    Vn = model.item_factors[negatives].astype(np.float64)
    W = terms.weight
    row_w = W.sum(axis=1)
    d_ctx = row_w[:, None] * Vp - W @ Vn
    d_pos = row_w[:, None] * U
    d_neg = -(W.T @ U)
    return SparseGradient.from_rows(
        contexts, d_ctx,
        np.concatenate([items, negatives]), np.vstack([d_pos, d_neg]))


def batched_step(model: FactorModel, batch: SampledBatch, config: TrainConfig,
                 n_items: int) -> float:
    terms = batch_terms(model, batch.contexts, batch.items, batch.negatives,
                        config.loss, config.correction, n_items)
    grad = batch_gradient(model, batch.contexts, batch.items, batch.negatives, terms)
    apply_step(model, grad, config.eta, config.reg)
    v = terms.loss[terms.valid]
    return float(v.mean()) if v.size else 0.0


# ---------------------------------------------------------------------------
# iterative step


def _pair_sparse(model: FactorModel, loss: LossKind, c: int, i: int, j: int,
                 alpha: float) -> SparseGradient:
    g = pair_gradient(loss, model, c, i, j, alpha)
    return SparseGradient(np.array([c]), g.d_context[None, :].astype(np.float64),
                          np.array([i, j]), np.vstack([g.d_pos, g.d_neg]).astype(np.float64))


def iterative_step(model: FactorModel, c: int, i: int, config: TrainConfig,
                   rng: np.random.Generator) -> Optional[float]:
    """One pair update; returns the pair loss or None when WARP discards the step."""
    n = model.n_items
    if config.loss is LossKind.HINGE_WARP:
        outcome = warp_rejection_sample(model, c, i, config.loss, config.max_trials, rng)
        if not outcome.accepted:
            return None
        j = outcome.item
        alpha = warp_weight(warp_rank_from_trials(n, outcome.trials))
    else:
        j = draw_other_item(n, i, rng)
        scores = model.item_factors @ model.context_factors[c]
        r_i = int(np.count_nonzero(scores > scores[i])) + 1
        r_j = int(np.count_nonzero(scores > scores[j])) + 1
        alpha = lambda_weight(r_i, r_j)
    u = model.context_factors[c]
    s_i = float(np.dot(u, model.item_factors[i]))
    s_j = float(np.dot(u, model.item_factors[j]))
    apply_step(model, _pair_sparse(model, config.loss, c, i, j, alpha), config.eta, config.reg)
    return pair_loss(config.loss, s_i, s_j)


# ---------------------------------------------------------------------------
# drivers

Evaluator = Callable[[FactorModel], dict]


def _run(data: InteractionSet, n_items: int, config: TrainConfig,
         rng: np.random.Generator, epoch_fn, steps_per_epoch: int,
         model: Optional[FactorModel], evaluator: Optional[Evaluator],
         on_record: Optional[Callable[[dict], None]]):
    if len(data) == 0:
        raise ContractError("training data is empty")
    if model is None:
        model = init_model(data.n_contexts, n_items, config.dim, config.seed,
                           dtype=np.dtype(config.dtype))
    report = TrainReport()
    best_model, history = None, []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        losses, discarded = epoch_fn(model, steps_per_epoch)
        if not model.is_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        wall = (time.perf_counter() - t0) * 1000.0
        loss_mean = float(np.mean(losses)) if losses else 0.0
        report.epoch_loss.append(loss_mean)
        report.epoch_wall_ms.append(wall)
        report.discarded_steps += discarded
        logger.debug("epoch %d loss %.6f (%.0f ms)", epoch, loss_mean, wall)
        if evaluator is None or (epoch % config.eval_every and epoch != config.epochs):
            continue
        metrics = evaluator(model)
        record = {"epoch": epoch, "loss_mean": loss_mean, **metrics, "wall_ms": wall}
        report.evaluations.append(record)
        if on_record is not None:
            on_record(record)
        history.append(metrics["ndcg100"])
        if best_model is None or history[-1] > max(history[:-1]):
            best_model, report.best_epoch = model.copy(), epoch
        if early_stop(history, config.early_stop_patience):
            report.stop_reason = "early_stop"
            break
    report.model = best_model if best_model is not None else model
    return report.model, report


def train_iterative(data: InteractionSet, n_items: int, config: TrainConfig,
                    rng: np.random.Generator, model: Optional[FactorModel] = None,
                    evaluator: Optional[Evaluator] = None,
                    on_record: Optional[Callable[[dict], None]] = None):
    """One-pair-per-step training; an epoch is |S| steps."""
    if config.algorithm is not Algorithm.ITERATIVE:
        raise ContractError("train_iterative needs algorithm=iterative")
    contexts, items = data.contexts, data.items

    def epoch_fn(model, steps):
        losses, discarded = [], 0
        for idx in rng.integers(0, len(data), size=steps):
            out = iterative_step(model, int(contexts[idx]), int(items[idx]), config, rng)
            if out is None:
                discarded += 1
            else:
                losses.append(out)
        return losses, discarded

    return _run(data, n_items, config, rng, epoch_fn, len(data), model, evaluator, on_record)


def train_batched(data: InteractionSet, n_items: int, config: TrainConfig,
                  rng: np.random.Generator, model: Optional[FactorModel] = None,
                  evaluator: Optional[Evaluator] = None,
                  on_record: Optional[Callable[[dict], None]] = None):
    """Sampled batch training; an epoch is ceil(|S| / k) steps."""
    if config.algorithm is not Algorithm.BATCHED:
        raise ContractError("train_batched needs algorithm=batched")
    def epoch_fn(model, steps):
        losses = []
        for _ in range(steps):
            batch = sample_batch(data, n_items, config.k, config.m, rng, config.replacement)
            losses.append(batched_step(model, batch, config, n_items))
        return losses, 0

    steps = math.ceil(len(data) / config.k)
    return _run(data, n_items, config, rng, epoch_fn, steps, model, evaluator, on_record)


def train(data: InteractionSet, n_items: int, config: TrainConfig,
          rng: Optional[np.random.Generator] = None, **kwargs):
    if rng is None:
        rng = make_rng(config.seed, TRAIN_STREAM)
    fn = train_batched if config.algorithm is Algorithm.BATCHED else train_iterative
    return fn(data, n_items, config, rng, **kwargs)
