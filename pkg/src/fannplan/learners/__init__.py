from .gbm import GBMConfig, GBMRegressor, RegressionTree, gbm_fit, gbm_predict
from .mlp import (
    Adam,
    MLPClassifier,
    TrainConfig,
    TrainingError,
    mlp_predict_proba,
    mlp_train,
    numeric_gradient_check,
)
from .selection import UndefinedMetricError, grid_search, kfold_indices, roc_auc

__all__ = [
    "Adam",
    "GBMConfig",
    "GBMRegressor",
    "MLPClassifier",
    "RegressionTree",
    "TrainConfig",
    "TrainingError",
    "UndefinedMetricError",
    "gbm_fit",
    "gbm_predict",
    "grid_search",
    "kfold_indices",
    "mlp_predict_proba",
    "mlp_train",
    "numeric_gradient_check",
    "roc_auc",
]
