"""DarkRank: transferring cross-sample similarity structure from a teacher
embedding model to a student via listwise rank-matching losses."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .exceptions import (CapacityError, ConfigError, DataFormatError, InputError,
                         NumericalError, TrainingDivergedError)
from .losses import (KDParams, MarginParams, contrastive_loss, direct_match_loss,
                     fitnet_loss, kd_loss, softmax_ce_loss, triplet_loss)
from .ranking import (DEFAULT_ENUMERATION_CAP, ScoreParams, batch_scores,
                      best_permutation, hard_darkrank_loss, listmle_loss,
                      listnet_loss, perm_log_prob, perm_log_prob_grad, score,
                      soft_darkrank_loss)
from .trainer import (ExperimentConfig, LossWeights, OptimizerParams, Schedule,
                      TrainReport, evaluate_network, train, train_teacher)
from .types import EmbeddingBatch, LogitsBatch, LossResult

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "CapacityError", "ConfigError", "DataFormatError", "InputError",
    "NumericalError", "TrainingDivergedError",
    "KDParams", "MarginParams", "contrastive_loss", "direct_match_loss",
    "fitnet_loss", "kd_loss", "softmax_ce_loss", "triplet_loss",
    "DEFAULT_ENUMERATION_CAP", "ScoreParams", "batch_scores", "best_permutation",
    "hard_darkrank_loss", "listmle_loss", "listnet_loss", "perm_log_prob",
    "perm_log_prob_grad", "score", "soft_darkrank_loss",
    "ExperimentConfig", "LossWeights", "OptimizerParams", "Schedule",
    "TrainReport", "evaluate_network", "train", "train_teacher",
    "EmbeddingBatch", "LogitsBatch", "LossResult",
    "__version__",
]
