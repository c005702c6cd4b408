import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankcorrect.core import ContractError, FactorModel
from rankcorrect.losses import (
    LossKind,
    hinge_loss,
    logistic_loss,
    loss_slope,
    loss_slope_array,
    pair_gradient,
    pair_loss,
    pair_loss_array,
    softplus,
)

from conftest import random_model

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestHinge:
    def test_inactive(self):
        assert hinge_loss(2.0, 0.5) == 0.0

    def test_zero_margin(self):
        assert hinge_loss(0.0, 0.0) == 1.0

    def test_value(self):
        assert hinge_loss(0.2, 0.5) == pytest.approx(1.3, abs=1e-15)

    def test_nonfinite(self):
        with pytest.raises(ContractError):
            hinge_loss(float("nan"), 0.0)

    @given(finite, finite)
    def test_gradient_zero_exactly_where_loss_zero(self, a, b):
        zero_loss = hinge_loss(a, b) == 0.0
        assert (loss_slope(LossKind.HINGE_WARP, a - b) == 0.0) == zero_loss


class TestLogistic:
    def test_equal_scores(self):
        assert logistic_loss(0.3, 0.3) == pytest.approx(math.log(2), abs=1e-15)

    def test_saturated(self):
        assert 0 <= logistic_loss(40.0, 0.0) < 1e-17

    def test_negative_difference(self):
        assert logistic_loss(0.0, 1.0) == pytest.approx(math.log(1 + math.e), abs=1e-14)

    def test_huge_difference_no_overflow(self):
        assert logistic_loss(0.0, 1e5) == pytest.approx(1e5)
        assert logistic_loss(1e5, 0.0) == 0.0

    def test_nonfinite(self):
        with pytest.raises(ContractError):
            logistic_loss(float("inf"), 0.0)

    @given(st.floats(-700, 700))
    def test_softplus_pair_identity(self, x):
        lhs = logistic_loss(x, 0.0) + logistic_loss(0.0, x)
        rhs = abs(x) + 2 * softplus(-abs(x))
        assert lhs == pytest.approx(rhs, abs=1e-12, rel=1e-15)

    @given(st.floats(-100, 100))
    def test_array_forms_agree(self, x):
        for kind in LossKind:
            assert pair_loss_array(kind, np.array([x]))[0] == pytest.approx(
                pair_loss(kind, x, 0.0), rel=1e-12, abs=1e-300)
            assert loss_slope_array(kind, np.array([x]))[0] == pytest.approx(
                loss_slope(kind, x), rel=1e-12, abs=1e-300)


class TestPairGradient:
    def test_hinge_satisfied_margin_is_zero(self):
        m = FactorModel(np.array([[1.0]]), np.array([[3.0], [0.5]]))
        assert pair_gradient(LossKind.HINGE_WARP, m, 0, 0, 1, 2.0).is_zero()

    def test_zero_alpha(self, rng):
        m = random_model(rng, 2, 4, 3)
        for kind in LossKind:
            assert pair_gradient(kind, m, 1, 0, 2, 0.0).is_zero()

    def test_hand_chain_rule(self):
        m = FactorModel(np.array([[1.0]]), np.array([[0.0], [0.0]]))
        g = pair_gradient(LossKind.LOGISTIC_LAMBDA, m, 0, 0, 1, 1.0)
        assert g.d_context.tolist() == [0.0]
        assert g.d_pos.tolist() == [-0.5]
        assert g.d_neg.tolist() == [0.5]

    def test_negative_update_is_negated_positive(self, rng):
        m = random_model(rng, 3, 6, 4)
        for kind in LossKind:
            for _ in range(20):
                c, i, j = rng.integers(0, 3), *rng.choice(6, 2, replace=False)
                g = pair_gradient(kind, m, int(c), int(i), int(j), float(rng.uniform(0, 3)))
                assert np.array_equal(g.d_neg, -g.d_pos)

    @pytest.mark.parametrize("alpha", [-1.0, float("nan"), float("inf")])
    def test_bad_alpha(self, rng, alpha):
        m = random_model(rng, 1, 3, 2)
        with pytest.raises(ContractError):
            pair_gradient(LossKind.LOGISTIC_LAMBDA, m, 0, 0, 1, alpha)

    def test_bad_ids(self, rng):
        m = random_model(rng, 1, 3, 2)
        with pytest.raises(ContractError):
            pair_gradient(LossKind.LOGISTIC_LAMBDA, m, 0, 0, 3, 1.0)
