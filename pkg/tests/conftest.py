import numpy as np
import pytest

from rankcorrect.core import FactorModel, InteractionSet


def column_model(scores, n_contexts=1):
    """d=1 model whose single context scores item i as ``scores[i]``."""
    v = np.asarray(scores, dtype=np.float64)[:, None]
    return FactorModel(np.ones((n_contexts, 1)), v.copy())


def random_model(rng, n_contexts, n_items, dim, scale=1.0):
    return FactorModel(rng.normal(0, scale, (n_contexts, dim)),
                       rng.normal(0, scale, (n_items, dim)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def planted_split():
    """Small planted dataset: 40 users x 30 items, 20 evaluation users."""
    from rankcorrect.data import PrepConfig, prepare_synthetic

    cfg = PrepConfig(n_eval_users=20, synthetic_users=40, synthetic_items=30,
                     synthetic_dim=4, synthetic_top=6, synthetic_seed=3)
    return prepare_synthetic(cfg)


@pytest.fixture
def tiny_interactions():
    return InteractionSet.from_pairs(3, 5, [(0, 1), (0, 3), (1, 0), (2, 4), (2, 2), (0, 1)])


ACCEPTANCE = {}


def record_acceptance(criterion, ok, detail):
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
