"""Train-and-evaluate runs shared by the CLI and the acceptance suite."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import FactorModel
from .data import PreparedData
from .metrics import TEST, TUNING, EvalReport, evaluate
from .training import TrainConfig, TrainReport, train

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    config: TrainConfig
    model: FactorModel
    report: TrainReport
    tuning: EvalReport
    test: EvalReport


def tuning_evaluator(prepared: PreparedData):
    def ev(model: FactorModel) -> dict:
        rep = evaluate(model, prepared.split, TUNING)
        return {"recall20": rep.recall20, "recall50": rep.recall50, "ndcg100": rep.ndcg100}
    return ev


def run(prepared: PreparedData, config: TrainConfig, log_path=None,
        ndcg_cutoffs: Iterable[int] = (100,)) -> RunResult:
    """Train with per-epoch tuning evaluation, keep the best checkpoint and
    score it on both partitions.

    ``log_path`` receives one JSON line per evaluation plus a closing record
    (``"final": true``) with the retained model's tuning metrics.
    """
    ndcg_cutoffs = tuple(sorted(set(ndcg_cutoffs) | {100}))
    log = open(log_path, "w") if log_path is not None else None

    def on_record(record):
        if log is not None:
            log.write(json.dumps(record, sort_keys=True) + "\n")

    try:
        model, report = train(prepared.train, prepared.catalog.n_items, config,
                              evaluator=tuning_evaluator(prepared), on_record=on_record)
        tuning = evaluate(model, prepared.split, TUNING, ndcg_cutoffs=ndcg_cutoffs)
        test = evaluate(model, prepared.split, TEST, ndcg_cutoffs=ndcg_cutoffs)
        for rep in (tuning, test):
            rep.config = config.to_dict()
        if log is not None:
            final = {"final": True, "best_epoch": report.best_epoch,
                     "stop_reason": report.stop_reason,
                     "recall20": tuning.recall20, "recall50": tuning.recall50,
                     "ndcg100": tuning.ndcg100}
            log.write(json.dumps(final, sort_keys=True) + "\n")
    finally:
        if log is not None:
            log.close()
    return RunResult(config, model, report, tuning, test)


@dataclass
class ArmResult:
    """Outcome of selecting eta on tuning users and scoring on test users."""

    config: TrainConfig
    etas: tuple
    tuning_by_eta: dict      # eta -> mean tuning NDCG@100 over seeds
    eta: float               # selected rate
    test: list               # test NDCG@100 per seed at the selected rate

    @property
    def mean(self) -> float:
        return float(np.mean(self.test))

    @property
    def se(self) -> float:
        return float(np.std(self.test, ddof=1) / np.sqrt(len(self.test)))


def tuned_arm(prepared: PreparedData, base: TrainConfig, etas: Sequence[float],
              seeds: Sequence[int]) -> ArmResult:
    """Train every (eta, seed), pick eta by mean tuning NDCG@100 (ties go to
    the earlier grid entry), report per-seed test NDCG@100 at that eta."""
    tuning, test = {}, {}
    for eta in etas:
        results = [run(prepared, replace(base, eta=eta, seed=s)) for s in seeds]
        tuning[eta] = float(np.mean([r.tuning.ndcg100 for r in results]))
        test[eta] = [r.test.ndcg100 for r in results]
        logger.info("%s eta=%g tuning=%.4f", base.correction.value, eta, tuning[eta])
    best = max(etas, key=lambda e: tuning[e])
    return ArmResult(base, tuple(etas), tuning, best, test[best])
