"""Probability learners and the stacking ensemble used for nuisance models."""
from .base import (
    EPS,
    ConstantModel,
    FittedModel,
    LearnerError,
    LearnerSpec,
    clamp,
    fit_constant,
    log_loss,
)
from .gbt import GBTModel, fit_gbt
from .ridge import RidgeLogisticModel, fit_ridge_logistic, penalized_nll
from .stacking import (
    EnsembleModel,
    fit_learner,
    fit_super_learner,
    predict,
    simplex_log_loss_weights,
    stratified_folds,
)

DEFAULT_ROSTER = (
    LearnerSpec("constant"),
    LearnerSpec("ridge_logistic"),
    LearnerSpec("gbt"),
)

__all__ = [
    "DEFAULT_ROSTER",
    "EPS",
    "ConstantModel",
    "EnsembleModel",
    "FittedModel",
    "GBTModel",
    "LearnerError",
    "LearnerSpec",
    "RidgeLogisticModel",
    "clamp",
    "fit_constant",
    "fit_gbt",
    "fit_learner",
    "fit_ridge_logistic",
    "fit_super_learner",
    "log_loss",
    "penalized_nll",
    "predict",
    "simplex_log_loss_weights",
    "stratified_folds",
]
