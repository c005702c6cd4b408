"""Acceptance criteria, each checked at its stated tolerance and time budget.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import functools
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import column_model, record_acceptance
from rankcorrect.core import FactorModel, InteractionSet, init_model, save_model
from rankcorrect.data import PrepConfig, prepare_synthetic
from rankcorrect.experiments import run, tuned_arm
from rankcorrect.losses import LossKind, pair_gradient, pair_loss
from rankcorrect.metrics import TEST, EvalSplit, evaluate
from rankcorrect.ranking import Correction, sampled_rank, true_rank
from rankcorrect.sampling import Replacement, SampledBatch, full_negatives, make_rng
from rankcorrect.simulation import simulate
from rankcorrect.training import Algorithm, TrainConfig, batched_step, iterative_step, train

from test_metrics import brute_force, random_split


def check(criterion, ok, detail):
    record_acceptance(criterion, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------- 1, 2

def test_criterion_01_binomial_law():
    t0 = time.perf_counter()
    res = simulate(1000, 101, 50, 100_000, seed=1)
    elapsed = time.perf_counter() - t0
    stat, pval, dof = res.chi_square()
    analytic = 1 + 50 * 100 / 999
    z = (res.mean_sampled() - analytic) / res.se_sampled()
    assert analytic == pytest.approx(6.005, abs=1e-3)
    check(1, pval > 1e-3 and abs(z) <= 3 and elapsed < 10,
          f"chi2={stat:.2f} dof={dof} p={pval:.3f}; mean r~={res.mean_sampled():.4f} "
          f"vs {analytic:.4f} ({z:+.2f} SE); {elapsed:.1f}s")


def test_criterion_02_estimator_unbiased():
    t0 = time.perf_counter()
    parts, ok = [], True
    for r in (2, 101, 500, 999):
        res = simulate(1000, r, 50, 100_000, seed=2 + r)
        z = (res.mean_estimated() - r) / res.se_estimated()
        ok &= abs(z) <= 3
        parts.append(f"r={r}: {res.mean_estimated():.2f} ({z:+.2f} SE)")
    elapsed = time.perf_counter() - t0
    check(2, ok and elapsed < 60, "; ".join(parts) + f"; {elapsed:.1f}s")


# ---------------------------------------------------------------- 3

def test_criterion_03_definitional_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    checked = mismatches = 0
    for t in range(100):
        n = int(rng.integers(2, 51))
        nc, d = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        if t % 2:
            # coarse integer factors produce tied scores
            model = FactorModel(rng.integers(-2, 3, (nc, d)).astype(float),
                                rng.integers(-2, 3, (n, d)).astype(float))
        else:
            model = FactorModel(rng.normal(size=(nc, d)), rng.normal(size=(n, d)))
        for c in range(nc):
            for i in range(n):
                checked += 1
                mismatches += sampled_rank(model, c, i, full_negatives(n, [i])) != \
                    true_rank(model, c, i)
    elapsed = time.perf_counter() - t0
    check(3, mismatches == 0 and elapsed < 5,
          f"{checked} positives over 100 models, {mismatches} mismatches; {elapsed:.1f}s")


# ---------------------------------------------------------------- 4

def _objective(loss, model, c, i, j, alpha):
    u = model.context_factors[c]
    return alpha * pair_loss(loss, float(u @ model.item_factors[i]),
                             float(u @ model.item_factors[j]))


def _finite_difference(loss, model, c, i, j, alpha, h=1e-6):
    parts = []
    for mat, row in ((model.context_factors, c), (model.item_factors, i),
                     (model.item_factors, j)):
        g = np.empty(mat.shape[1])
        for q in range(mat.shape[1]):
            x = mat[row, q]
            mat[row, q] = x + h
            up = _objective(loss, model, c, i, j, alpha)
            mat[row, q] = x - h
            down = _objective(loss, model, c, i, j, alpha)
            mat[row, q] = x
            g[q] = (up - down) / (2 * h)
        parts.append(g)
    return np.concatenate(parts)


def test_criterion_04_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, counts = {}, {}
    for loss in LossKind:
        worst[loss], counts[loss] = 0.0, 0
        while counts[loss] < 1000:
            d = int(rng.integers(1, 9))
            model = FactorModel(rng.normal(size=(3, d)), rng.normal(size=(6, d)))
            c, (i, j) = int(rng.integers(3)), rng.choice(6, 2, replace=False)
            u = model.context_factors[c]
            diff = float(u @ model.item_factors[i] - u @ model.item_factors[j])
            if loss is LossKind.HINGE_WARP and abs(1 - diff) < 1e-3:
                continue
            alpha = float(rng.uniform(0.01, 5))
            g = pair_gradient(loss, model, c, int(i), int(j), alpha)
            analytic = np.concatenate([g.d_context, g.d_pos, g.d_neg])
            fd = _finite_difference(loss, model, c, int(i), int(j), alpha)
            scale = max(np.linalg.norm(analytic), np.linalg.norm(fd))
            err = 0.0 if scale == 0 else np.linalg.norm(analytic - fd) / scale
            worst[loss] = max(worst[loss], err)
            counts[loss] += 1
    elapsed = time.perf_counter() - t0
    ok = all(w <= 1e-4 for w in worst.values()) and elapsed < 30
    check(4, ok, "; ".join(f"{k.value}: {counts[k]} instances, max rel err {worst[k]:.2e}"
                           for k in LossKind) + f"; {elapsed:.1f}s")


# ---------------------------------------------------------------- 5

def test_criterion_05_zero_step_and_inactivity():
    data = InteractionSet.from_pairs(5, 12, [(c, (3 * c + q) % 12) for c in range(5)
                                             for q in range(3)])
    same = []
    for alg in Algorithm:
        for loss in LossKind:
            cfg = TrainConfig(algorithm=alg, loss=loss, eta=0.0, epochs=4, dim=3, k=3, m=5,
                              seed=11)
            model, _ = train(data, 12, cfg)
            init = init_model(5, 12, 3, 11)
            same.append(model.context_factors.tobytes() == init.context_factors.tobytes()
                        and model.item_factors.tobytes() == init.item_factors.tobytes())

    model = column_model([9.0, 8.0, 1.0, 0.0, -3.0], n_contexts=3)
    before = model.copy()
    batch = SampledBatch(np.array([0, 1, 2]), np.array([0, 1, 0]), np.array([2, 3, 4, 3, 2]),
                         Replacement.WITH)
    batched_step(model, batch, TrainConfig(loss=LossKind.HINGE_WARP, eta=0.9), 5)
    inactive_batched = model.item_factors.tobytes() == before.item_factors.tobytes() and \
        model.context_factors.tobytes() == before.context_factors.tobytes()
    cfg = TrainConfig(loss=LossKind.HINGE_WARP, algorithm=Algorithm.ITERATIVE, eta=0.9,
                      max_trials=50)
    discarded = iterative_step(model, 0, 0, cfg, make_rng(5)) is None
    inactive_iter = model.item_factors.tobytes() == before.item_factors.tobytes()
    check(5, all(same) and inactive_batched and discarded and inactive_iter,
          f"eta=0 identical for {sum(same)}/4 algorithm x loss runs; satisfied-margin batch "
          f"unchanged={inactive_batched}; WARP no-violation step unchanged={inactive_iter}")


# ---------------------------------------------------------------- 6

def _stripped_log(path):
    lines = []
    for line in open(path):
        rec = json.loads(line)
        rec.pop("wall_ms", None)  # timing is isolated to this field
        lines.append(json.dumps(rec, sort_keys=True))
    return lines


def test_criterion_06_determinism(tmp_path):
    prepared = prepare_synthetic(PrepConfig(synthetic_users=80, synthetic_items=60,
                                            synthetic_top=8, n_eval_users=30))
    results = []
    for alg in Algorithm:
        cfg = TrainConfig(algorithm=alg, epochs=3, k=16, m=8, dim=4, seed=2**63 + 17)
        outputs = []
        for attempt in range(2):
            d = tmp_path / f"{alg.value}{attempt}"
            d.mkdir()
            r = run(prepared, cfg, log_path=d / "log.jsonl")
            save_model(r.model, d / "model.ckpt")
            outputs.append(((d / "model.ckpt").read_bytes(), _stripped_log(d / "log.jsonl")))
        results.append(outputs[0] == outputs[1])
    check(6, all(results), f"batched identical={results[0]}, iterative identical={results[1]}")


# ---------------------------------------------------------------- 7, 8

SEEDS = (0, 1, 2, 3, 4)
# per-pair learning rates; batched gradients sum k x m pairs so the grid scales with 8 / m
BASE_ETAS = (0.01, 0.02, 0.05, 0.1)


@functools.lru_cache(maxsize=None)
def _planted():
    return prepare_synthetic(PrepConfig(n_eval_users=400))


@functools.lru_cache(maxsize=None)
def _arm(m, correction):
    base = TrainConfig(loss=LossKind.LOGISTIC_LAMBDA, algorithm=Algorithm.BATCHED,
                       correction=correction, m=m, k=32, dim=8, epochs=60,
                       early_stop_patience=5)
    etas = tuple(e * 8 / m for e in BASE_ETAS)
    t0 = time.perf_counter()
    arm = tuned_arm(_planted(), base, etas, SEEDS)
    return arm, time.perf_counter() - t0


def _describe(arm):
    return f"{arm.mean:.4f}+-{arm.se:.4f} (eta {arm.eta:g})"


@pytest.mark.slow
def test_criterion_07_correction_helps_small_m():
    corrected, t1 = _arm(8, "corrected")
    plain, t2 = _arm(8, "none")
    gaps = np.subtract(corrected.test, plain.test)
    gap, gap_se = gaps.mean(), gaps.std(ddof=1) / math.sqrt(len(gaps))
    elapsed = t1 + t2
    check(7, corrected.mean >= plain.mean and elapsed < 600,
          f"m=8 test NDCG@100 corrected {_describe(corrected)} vs none {_describe(plain)}; "
          f"gap {gap:+.4f}+-{gap_se:.4f}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_08_larger_sample_not_worse():
    small, t1 = _arm(8, "corrected")
    large, t2 = _arm(128, "corrected")
    pooled = math.sqrt((small.se**2 + large.se**2) / 2)
    elapsed = t1 + t2
    check(8, large.mean >= small.mean - pooled and elapsed < 900,
          f"corrected test NDCG@100 m=128 {_describe(large)} vs m=8 {_describe(small)}; "
          f"pooled SE {pooled:.4f}; {elapsed:.0f}s")


# ---------------------------------------------------------------- 9

def test_criterion_09_metric_oracle():
    rng = np.random.default_rng(9)
    exact = 0
    for _ in range(200):
        n_items, n_users = int(rng.integers(3, 31)), int(rng.integers(2, 8))
        split = random_split(rng, n_users, n_items)
        scores = rng.integers(-3, 4, (n_users, n_items)).astype(float)
        model = FactorModel(scores.copy(), np.eye(n_items))
        rep = evaluate(model, split, TEST, recall_cutoffs=(1, 5, 20), ndcg_cutoffs=(3, 10, 100))
        rec, nd = brute_force(scores, split, TEST, (1, 5, 20), (3, 10, 100))
        exact += rep.recall == rec and rep.ndcg == nd

    split = EvalSplit(InteractionSet.from_pairs(3, 6, [(0, 0), (1, 5), (2, 1), (2, 2)]),
                      {0: np.array([1, 2]), 1: np.array([3]), 2: np.array([0, 4, 5])},
                      {0: TEST, 1: TEST, 2: TEST})
    scores = np.array([[9, 5, 1, 4, 3, 2], [1, 2, 3, 4, 5, 6], [0, 0, 0, 0, 0, 0]], float)
    rep = evaluate(FactorModel(scores, np.eye(6)), split, TEST, recall_cutoffs=(2,),
                   ndcg_cutoffs=(3,))
    d = lambda p: 1 / math.log2(p + 1)  # noqa: E731
    nd3 = (d(1) / (d(1) + d(2)) + d(2) + (d(1) + d(3)) / (d(1) + d(2) + d(3))) / 3
    hand = abs(rep.recall[2] - 2 / 3) <= 1e-12 and abs(rep.ndcg[3] - nd3) <= 1e-12
    check(9, exact == 200 and hand,
          f"{exact}/200 random instances exact; hand fixture within 1e-12: {hand}")


# ---------------------------------------------------------------- 10

def test_criterion_10_documented_recipe():
    from pathlib import Path

    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    ok = "Full-scale reproduction" in readme and "rankcorrect sweep" in readme
    check(10, ok, "full-scale recipe documented in README (not gated on results)")
