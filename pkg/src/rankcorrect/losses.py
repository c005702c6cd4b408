"""Pairwise hinge / logistic losses and the weighted pair gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ContractError, FactorModel

_SOFTPLUS_CUT = 30.0


class LossKind(str, Enum):
    HINGE_WARP = "warp"
    LOGISTIC_LAMBDA = "lambdarank"


def _check_finite(*xs):
    for x in xs:
        if not math.isfinite(x):
            raise ContractError(f"non-finite input {x!r}")


def softplus(x: float) -> float:
    """ln(1 + e^x) without overflow."""
    if x > _SOFTPLUS_CUT:
        return x + math.log1p(math.exp(-x))
    if x < -_SOFTPLUS_CUT:
        return math.exp(x)
    return math.log1p(math.exp(x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def hinge_loss(s_i: float, s_j: float) -> float:
    _check_finite(s_i, s_j)
    return max(0.0, 1.0 - (s_i - s_j))


def logistic_loss(s_i: float, s_j: float) -> float:
    """-ln sigmoid(s_i - s_j), the minimised form of the log-likelihood loss."""
    _check_finite(s_i, s_j)
    return softplus(-(s_i - s_j))


def pair_loss(kind: LossKind, s_i: float, s_j: float) -> float:
    if kind is LossKind.HINGE_WARP:
        return hinge_loss(s_i, s_j)
    return logistic_loss(s_i, s_j)


def loss_slope(kind: LossKind, diff: float) -> float:
    """dl/d(s_i - s_j)."""
    if kind is LossKind.HINGE_WARP:
        return -1.0 if 1.0 - diff > 0.0 else 0.0
    return -sigmoid(-diff)


# Vectorised forms used by the batched trainer.

def softplus_array(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def pair_loss_array(kind: LossKind, diff: np.ndarray) -> np.ndarray:
    if kind is LossKind.HINGE_WARP:
        return np.maximum(0.0, 1.0 - diff)
    return softplus_array(-diff)


def loss_slope_array(kind: LossKind, diff: np.ndarray) -> np.ndarray:
    if kind is LossKind.HINGE_WARP:
        return np.where(1.0 - diff > 0.0, -1.0, 0.0)
    # -sigmoid(-diff) == -exp(-softplus(diff))
    return -np.exp(-np.logaddexp(0.0, diff))


@dataclass
class PairGradient:
    """alpha * dl/dtheta restricted to the three rows a pair touches."""

    c: int
    i: int
    j: int
    d_context: np.ndarray
    d_pos: np.ndarray
    d_neg: np.ndarray

    def is_zero(self) -> bool:
        return not (self.d_context.any() or self.d_pos.any() or self.d_neg.any())


def pair_gradient(kind: LossKind, model: FactorModel, c: int, i: int, j: int,
                  alpha: float) -> PairGradient:
    """Gradient of ``alpha * l(c, i, j)`` with alpha held constant.

    With g = dl/d(s_i - s_j): u_c gets alpha*g*(v_i - v_j), v_i gets
    alpha*g*u_c and v_j gets -alpha*g*u_c.
    """
    kind = LossKind(kind)
    if not math.isfinite(alpha) or alpha < 0:
        raise ContractError(f"alpha must be finite and >= 0, got {alpha}")
    model.check_context(c)
    model.check_item(i)
    model.check_item(j)
    u = model.context_factors[c]
    v_i = model.item_factors[i]
    v_j = model.item_factors[j]
    diff = float(np.dot(u, v_i)) - float(np.dot(u, v_j))
    w = alpha * loss_slope(kind, diff)
    d_pos = w * u
    return PairGradient(c, i, j, w * (v_i - v_j), d_pos, -d_pos)
