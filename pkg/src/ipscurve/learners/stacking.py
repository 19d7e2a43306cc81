"""Cross-validated convex stacking ("super learner") over probability learners."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .base import EPS, FittedModel, LearnerError, LearnerSpec, _check_xy, clamp, fit_constant
from .gbt import fit_gbt
from .ridge import fit_ridge_logistic

log = logging.getLogger(__name__)

EG_MAX_ITER = 10_000
EG_TOL = 1e-10


def fit_learner(spec: LearnerSpec, x, y) -> FittedModel:
    if spec.kind == "constant":
        return fit_constant(x, y)
    if spec.kind == "ridge_logistic":
        return fit_ridge_logistic(x, y, spec.hyperparameters["penalty"])
    return fit_gbt(x, y, spec)


def stratified_folds(y, k: int, rng: np.random.Generator) -> np.ndarray:
    """Assign fold labels so each class is dealt round-robin after shuffling.

    The starting fold for each class continues where the previous class
    stopped, which keeps fold sizes within one of each other.
    """
    y = np.asarray(y)
    folds = np.empty(y.shape[0], np.int64)
    offset = 0
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return folds


def _risk(y, p) -> float:
    p = clamp(p)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def simplex_log_loss_weights(z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, int]:
    """Minimize the log-loss of ``clamp(z @ w)`` over the probability simplex.

    Exponentiated-gradient descent from the barycenter, halving the step
    whenever it fails to lower the risk. Stops once the improvement falls
    below 1e-10 or after 10,000 iterations. The best vertex is kept if it
    beats the iterate, so the result never loses to a single member.
    Returns ``(weights, risk, iterations)``.
    """
    n, m = z.shape
    y = np.asarray(y, dtype=float)
    w = np.full(m, 1.0 / m)
    risk = _risk(y, z @ w)
    eta = 1.0
    it = 0
    if m > 1:
        for it in range(1, EG_MAX_ITER + 1):
            p = clamp(z @ w)
            dp = (p - y) / (p * (1.0 - p))
            grad = z.T @ dp / n
            with np.errstate(divide="ignore"):
                log_w = np.log(w)
            while True:
                log_c = log_w - eta * grad
                cand = np.exp(log_c - log_c.max())
                cand /= cand.sum()
                cand_risk = _risk(y, z @ cand)
                if cand_risk < risk or eta < 1e-12:
                    break
                eta *= 0.5
            if cand_risk >= risk:
                break
            improvement = risk - cand_risk
            w, risk = cand, cand_risk
            eta = min(eta * 2.0, 1e6)
            if improvement < EG_TOL:
                break
    vertex_risk = np.array([_risk(y, z[:, j]) for j in range(m)])
    j = int(np.argmin(vertex_risk))
    if vertex_risk[j] < risk:
        w = np.zeros(m)
        w[j] = 1.0
        risk = float(vertex_risk[j])
    return w, risk, it


@dataclass(frozen=True, eq=False)
class EnsembleModel(FittedModel):
    members: tuple[FittedModel, ...]
    specs: tuple[LearnerSpec, ...]
    weights: np.ndarray
    member_cv_risk: np.ndarray
    cv_risk: float
    feature_count: int
    iterations: int = 0
    converged: bool = True
    dropped: tuple[str, ...] = ()

    def member_predictions(self, x) -> np.ndarray:
        return np.column_stack([m.predict(x) for m in self.members])

    def _predict(self, x):
        return self.member_predictions(x) @ self.weights

    def provenance(self) -> dict:
        return {
            "members": [s.name for s in self.specs],
            "weights": [float(w) for w in self.weights],
            "member_cv_log_loss": [float(r) for r in self.member_cv_risk],
            "ensemble_cv_log_loss": float(self.cv_risk),
            "dropped": list(self.dropped),
        }


def fit_super_learner(specs, x, y, k_folds: int = 10, seed: int = 0) -> EnsembleModel:
    """Fit a cross-validated convex combination of the given learners.

    Builds the out-of-fold prediction matrix on ``k_folds`` folds stratified
    by ``y``, solves for simplex weights minimizing cross-validated log-loss,
    then refits every member on the full data. A member that raises while
    fitting is dropped with a warning unless it is the only one left.
    """
    specs = [s if isinstance(s, LearnerSpec) else LearnerSpec.from_dict(s) for s in specs]
    if not specs:
        raise LearnerError("at least one learner spec is required")
    x, y = _check_xy(x, y)
    n = x.shape[0]
    if not 2 <= k_folds <= n:
        raise LearnerError(f"k_folds must lie in [2, n={n}], got {k_folds}")
    folds = stratified_folds(y, k_folds, np.random.default_rng(seed))

    level_one = np.full((n, len(specs)), np.nan)
    failed: dict[int, str] = {}
    for j, spec in enumerate(specs):
        for k in range(k_folds):
            test = folds == k
            if not test.any():
                continue
            try:
                model = fit_learner(spec, x[~test], y[~test])
            except (LearnerError, ValueError, np.linalg.LinAlgError) as exc:
                failed[j] = f"{spec.name}: {exc}"
                break
            level_one[test, j] = model.predict(x[test])

    members, kept = [], []
    for j, spec in enumerate(specs):
        if j in failed:
            continue
        try:
            members.append(fit_learner(spec, x, y))
            kept.append(j)
        except (LearnerError, ValueError, np.linalg.LinAlgError) as exc:
            failed[j] = f"{spec.name}: {exc}"
    if not kept:
        raise LearnerError("every learner failed to fit: " + "; ".join(failed.values()))
    for msg in failed.values():
        warnings.warn(f"dropping learner {msg}", RuntimeWarning, stacklevel=2)
        log.warning("dropping learner %s", msg)

    z = level_one[:, kept]
    member_risk = np.array([_risk(y, z[:, j]) for j in range(len(kept))])
    weights, risk, iters = simplex_log_loss_weights(z, y)
    return EnsembleModel(
        members=tuple(members),
        specs=tuple(specs[j] for j in kept),
        weights=weights,
        member_cv_risk=member_risk,
        cv_risk=risk,
        feature_count=x.shape[1],
        iterations=iters,
        converged=iters < EG_MAX_ITER,
        dropped=tuple(failed.values()),
    )


def predict(model: FittedModel, x_new) -> np.ndarray:
    """Probabilities from any fitted model, clamped to ``[1e-6, 1 - 1e-6]``."""
    return model.predict(x_new)


__all__ = [
    "EPS",
    "EnsembleModel",
    "fit_learner",
    "fit_super_learner",
    "predict",
    "simplex_log_loss_weights",
    "stratified_folds",
]
