"""Gradient-boosted regression trees on the logistic loss."""
from __future__ import annotations

import numpy as np

from ._tree_kernels import boost, predict_scores
from .base import EPS, FittedModel, LearnerError, LearnerSpec, _check_xy, expit, logit


class GBTModel(FittedModel):
    def __init__(self, f0, feature, threshold, value, feature_count, spec):
        self.f0 = float(f0)
        self.feature = feature
        self.threshold = threshold
        self.value = value
        self.feature_count = feature_count
        self.spec = spec
        self.iterations = feature.shape[0]

    @property
    def tree_count(self) -> int:
        return self.feature.shape[0]

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.feature_count)
        if self.tree_count == 0:
            return np.full(x.shape[0], self.f0)
        return predict_scores(x, self.f0, self.feature, self.threshold, self.value)

    def _predict(self, x):
        return expit(self.decision_function(x))


def fit_gbt(x, y, spec: LearnerSpec | None = None, **hyperparameters) -> GBTModel:
    """Boost depth-limited trees on the logistic loss.

    Each stage fits a regression tree to the residuals ``y - p`` (the negative
    gradient), choosing splits by exact variance reduction over sorted unique
    feature values; leaf values take a single Newton step
    ``sum(residual) / sum(p * (1 - p))`` scaled by the learning rate. The
    initial score is the log-odds of the clamped mean response. A constant
    response has zero gradient, so no trees are grown.
    """
    if spec is None:
        spec = LearnerSpec("gbt", hyperparameters)
    elif hyperparameters:
        raise TypeError("pass either a spec or keyword hyperparameters, not both")
    if spec.kind != "gbt":
        raise LearnerError(f"fit_gbt needs a gbt spec, got {spec.kind}")
    hp = spec.hyperparameters
    x, y = _check_xy(x, y, min_rows=max(2, 2 * hp["min_leaf"]))
    ybar = float(y.mean())
    f0 = logit(min(max(ybar, EPS), 1.0 - EPS))
    p = x.shape[1]
    m = (1 << (hp["max_depth"] + 1)) - 1
    if ybar in (0.0, 1.0) or p == 0:
        empty = np.full((0, m), -1, np.int64)
        return GBTModel(f0, empty, np.zeros((0, m)), np.zeros((0, m)), p, spec)
    feature, threshold, value = boost(
        x, y, f0, hp["tree_count"], hp["max_depth"], hp["min_leaf"], hp["learning_rate"]
    )
    return GBTModel(f0, feature, threshold, value, p, spec)
