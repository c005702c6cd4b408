import numpy as np
import pytest

from rankcorrect.core import ContractError
from rankcorrect.sampling import Replacement
from rankcorrect.simulation import planted_scores, simulate


class TestPlanted:
    def test_true_rank(self):
        s = planted_scores(10, 4)
        assert int((s > s[0]).sum()) + 1 == 4

    def test_bounds(self):
        with pytest.raises(ContractError):
            planted_scores(10, 11)


class TestSimulate:
    def test_top_rank(self):
        res = simulate(50, 1, 7, 500)
        assert (res.sampled == 1).all() and (res.estimated == 1).all()
        assert res.chi_square()[1] == 1.0

    def test_bottom_rank_full_sample(self):
        res = simulate(30, 30, 29, 50, replacement=Replacement.WITHOUT)
        assert (res.sampled == 30).all() and (res.estimated == 30).all()

    def test_without_replacement_mean(self):
        # hypergeometric mean of items above: m (r - 1) / (n - 1)
        res = simulate(100, 34, 20, 20_000, seed=3, replacement=Replacement.WITHOUT)
        assert abs(res.mean_sampled() - (1 + 20 * 33 / 99)) < 4 * res.se_sampled()

    def test_deterministic(self):
        a, b = simulate(200, 50, 10, 1000, seed=5), simulate(200, 50, 10, 1000, seed=5)
        assert np.array_equal(a.sampled, b.sampled)

    def test_chunking_does_not_change_stream_shape(self):
        res = simulate(200, 50, 10, 1000, seed=5, chunk=7)
        assert res.sampled.shape == (1000,) and res.sampled.min() >= 1 and res.sampled.max() <= 11

    def test_fit_small(self):
        res = simulate(60, 20, 12, 20_000, seed=11)
        stat, pval, dof = res.chi_square()
        assert dof > 3 and pval > 1e-3
