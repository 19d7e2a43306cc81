"""L2-penalized logistic regression fitted by iteratively reweighted least squares."""
from __future__ import annotations

import numpy as np

from .base import FittedModel, _check_xy, expit

MAX_ITER = 100
TOL = 1e-8


def penalized_nll(beta: np.ndarray, x1: np.ndarray, y: np.ndarray, penalty: float) -> float:
    """Summed negative log-likelihood plus ``penalty/2 * ||beta[1:]||^2``.

    ``x1`` carries the intercept column first; the intercept is not penalized.
    """
    eta = x1 @ beta
    nll = np.sum(np.logaddexp(0.0, eta) - y * eta)
    return float(nll + 0.5 * penalty * np.dot(beta[1:], beta[1:]))


class RidgeLogisticModel(FittedModel):
    def __init__(self, coef: np.ndarray, penalty: float, iterations: int, converged: bool):
        self.coef = coef
        self.penalty = penalty
        self.iterations = iterations
        self.converged = converged
        self.feature_count = coef.shape[0] - 1

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def _predict(self, x):
        return expit(self.coef[0] + x @ self.coef[1:])


def fit_ridge_logistic(x, y, penalty: float = 1.0) -> RidgeLogisticModel:
    """Newton/IRLS with step halving on the penalized objective.

    Stops when the largest coefficient change drops below 1e-8 or after 100
    iterations; non-convergence (e.g. separable data with ``penalty=0``) is
    reported through ``converged`` rather than raised.
    """
    x, y = _check_xy(x, y, min_rows=2)
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    n, p = x.shape
    x1 = np.column_stack([np.ones(n), x])
    pen = np.full(p + 1, float(penalty))
    pen[0] = 0.0
    beta = np.zeros(p + 1)
    obj = penalized_nll(beta, x1, y, penalty)
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        mu = expit(x1 @ beta)
        w = mu * (1.0 - mu)
        grad = x1.T @ (mu - y) + pen * beta
        hess = (x1.T * w) @ x1 + np.diag(pen)
        try:
            step = np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta - t * step
            cand_obj = penalized_nll(cand, x1, y, penalty)
            if cand_obj <= obj + 1e-12 * max(1.0, abs(obj)) or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta)) if p + 1 else 0.0
        beta, obj = cand, cand_obj
        if change < TOL:
            converged = True
            break
    return RidgeLogisticModel(beta, float(penalty), it, converged)
