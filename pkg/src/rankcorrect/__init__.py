"""Sampled batch WARP / LambdaRank for implicit-feedback recommendation with
binomial correction of ranks computed on sampled negatives."""

from .core import (
    ContractError,
    FactorModel,
    InteractionSet,
    ItemCatalog,
    init_model,
    load_model,
    save_model,
    score,
    score_all,
)
from .losses import LossKind, hinge_loss, logistic_loss, pair_gradient
from .ranking import (
    Correction,
    RankEstimate,
    correct_rank,
    lambda_weight,
    ndcg_discount,
    sampled_rank,
    true_rank,
    warp_weight,
)
from .sampling import Replacement, make_rng
from .training import Algorithm, TrainConfig, TrainReport, train, train_batched, train_iterative

__version__ = "0.1.0"
