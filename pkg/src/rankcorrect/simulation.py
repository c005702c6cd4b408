"""Monte-Carlo study of sampled ranks under a planted score configuration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import ContractError
from .ranking import Correction, estimate_ranks, sampled_ranks
from .sampling import Replacement, make_rng

MIN_EXPECTED = 5.0


@dataclass
class SimulationResult:
    n: int
    true_rank: int
    m: int
    trials: int
    replacement: Replacement
    sampled: np.ndarray      # r~ per trial
    estimated: np.ndarray    # r^ per trial

    @property
    def p(self) -> float:
        return (self.true_rank - 1) / (self.n - 1)

    def mean_sampled(self) -> float:
        return float(self.sampled.mean())

    def mean_estimated(self) -> float:
        return float(self.estimated.mean())

    def se_sampled(self) -> float:
        return float(self.sampled.std(ddof=1) / np.sqrt(self.trials)) if self.trials > 1 else 0.0

    def se_estimated(self) -> float:
        return float(self.estimated.std(ddof=1) / np.sqrt(self.trials)) if self.trials > 1 else 0.0

    def distribution(self):
        """(values of r~, observed counts, binomial expected counts)."""
        values = np.arange(1, self.m + 2)
        observed = np.bincount(self.sampled - 1, minlength=self.m + 1)
        expected = stats.binom.pmf(values - 1, self.m, self.p) * self.trials
        return values, observed, expected

    def chi_square(self):
        """Goodness of fit of r~ - 1 against Binomial(m, p).

        Adjacent cells are pooled until each expected count reaches 5.
        Returns (statistic, p_value, degrees of freedom); degenerate
        distributions (p in {0, 1}) give statistic 0 and p-value 1 when
        every trial lands on the single supported value.
        """
        _, observed, expected = self.distribution()
        if self.p in (0.0, 1.0):
            ok = observed[np.argmax(expected)] == self.trials
            return 0.0, (1.0 if ok else 0.0), 0
        obs_cells, exp_cells = _pool(observed.astype(float), expected)
        if len(obs_cells) < 2:
            return 0.0, 1.0, 0
        # rescale to the same total so the pooled tails do not bias the test
        exp_cells = exp_cells * obs_cells.sum() / exp_cells.sum()
        stat, pval = stats.chisquare(obs_cells, exp_cells)
        return float(stat), float(pval), len(obs_cells) - 1


def _pool(observed: np.ndarray, expected: np.ndarray):
    obs_cells, exp_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= MIN_EXPECTED:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if obs_cells:
            obs_cells[-1] += o_acc
            exp_cells[-1] += e_acc
        else:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
    return np.array(obs_cells), np.array(exp_cells)


def planted_scores(n: int, true_rank: int) -> np.ndarray:
    """Scores where item 0 is the positive and exactly true_rank - 1 items beat it."""
    if n < 2 or not 1 <= true_rank <= n:
        raise ContractError(f"need n >= 2 and 1 <= true_rank <= n, got n={n}, r={true_rank}")
    s = np.full(n, -1.0)
    s[0] = 0.0
    s[1:true_rank] = 1.0
    return s


def simulate(n: int, true_rank: int, m: int, trials: int, seed: int = 0,
             replacement: Replacement = Replacement.WITH, chunk: int = 20_000) -> SimulationResult:
    """Draw ``trials`` negative samples of size ``m`` from I \\ {positive}.

    Each trial records the sampled rank of the positive and its corrected
    full-catalog estimate.
    """
    replacement = Replacement(replacement)
    scores = planted_scores(n, true_rank)
    if m < 1 or trials < 1:
        raise ContractError("m and trials must be >= 1")
    if replacement is Replacement.WITHOUT and m > n - 1:
        raise ContractError("without replacement needs m <= n - 1")
    rng = make_rng(seed)
    out = np.empty(trials, dtype=np.int64)
    done = 0
    if replacement is Replacement.WITHOUT:
        chunk = max(1, min(chunk, 4_000_000 // n))
    while done < trials:
        t = min(chunk, trials - done)
        if replacement is Replacement.WITH:
            # uniform over {1..n-1}: the positive is item 0
            sample = rng.integers(1, n, size=(t, m))
        else:
            sample = 1 + np.argsort(rng.random((t, n - 1)), axis=1)[:, :m]
        out[done:done + t] = sampled_ranks(np.zeros(t), scores[sample])
        done += t
    est = estimate_ranks(out, m, n, Correction.CORRECTED)
    return SimulationResult(n, true_rank, m, trials, replacement, out, est)
