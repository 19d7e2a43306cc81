"""Cross-fitted doubly robust estimation of incremental propensity score effects.

Multiplying each unit's odds of exposure by ``delta`` moves its propensity
from ``pi`` to ``q = delta*pi / (delta*pi + 1 - pi)``. The effect curve is
``psi(delta) = E[q * mu(1, X) + (1 - q) * mu(0, X)]``, estimated by averaging
per-unit influence values computed from out-of-fold nuisance predictions.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .dataset import AnalysisFrame
from .inference import EffectCurve, pointwise_ci
from .learners import DEFAULT_ROSTER, EPS, LearnerSpec, fit_learner, fit_super_learner
from .learners.stacking import stratified_folds

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


def _check_delta(delta) -> float:
    delta = float(delta)
    if not (np.isfinite(delta) and delta > 0):
        raise ValueError(f"delta must be positive and finite, got {delta}")
    return delta


@dataclass(frozen=True, eq=False)
class DeltaGrid:
    """Strictly increasing odds multipliers.

    Use :meth:`from_range` for the usual log-spaced grid; ``1.0`` is inserted
    whenever the range straddles it, so the status-quo point is always there.
    """

    values: np.ndarray
    construction: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1:
            raise ValueError("grid needs at least one delta")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("grid deltas must be positive and finite")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid deltas must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_range(
        cls,
        min: float = 0.1,
        max: float = 10.0,
        count: int = 100,
        spacing: Literal["log", "linear"] = "log",
    ) -> "DeltaGrid":
        lo, hi = _check_delta(min), _check_delta(max)
        if count < 1:
            raise ValueError("count must be >= 1")
        if count > 1 and not lo < hi:
            raise ValueError("grid min must be below max")
        if spacing == "log":
            v = np.geomspace(lo, hi, count) if count > 1 else np.array([lo])
        elif spacing == "linear":
            v = np.linspace(lo, hi, count) if count > 1 else np.array([lo])
        else:
            raise ValueError(f"unknown spacing {spacing!r}")
        if count > 1:
            v[0], v[-1] = lo, hi
        if lo <= 1.0 <= hi and not np.any(v == 1.0):
            v = np.sort(np.append(v, 1.0))
        return cls(v, {"min": lo, "max": hi, "count": int(count), "spacing": spacing})

    def __len__(self) -> int:
        return self.values.size

    def index_of(self, delta: float) -> int:
        """Grid position of ``delta`` (relative tolerance 1e-9); never snaps."""
        delta = _check_delta(delta)
        hit = np.flatnonzero(np.abs(self.values - delta) <= 1e-9 * delta)
        if hit.size == 0:
            nearest = self.values[np.argmin(np.abs(np.log(self.values) - np.log(delta)))]
            raise ValueError(f"delta {delta:g} is not on the grid; nearest grid point is {nearest:.10g}")
        return int(hit[0])


def shift_propensity(delta, pi):
    """Propensity after multiplying the odds of exposure by ``delta``.

    Exact at ``pi`` in {0, 1}; vectorizes over array inputs.
    """
    delta = np.asarray(delta, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return delta * pi / (1.0 + (delta - 1.0) * pi)


def _weights(delta, pi):
    omega = 1.0 + (delta - 1.0) * pi
    return omega, delta * pi / omega


def influence_value(delta, a, y, pi, mu1, mu0):
    """Per-unit influence values for ``psi(delta)``, treatment-indicator form.

    ``phi = q*mu1 + (1-q)*mu0 + a*(delta/w)*(y-mu1) + (1-a)*(1/w)*(y-mu0)
    + delta*(mu1-mu0)*(a-pi)/w**2`` with ``w = delta*pi + 1 - pi``. The
    weights ``delta/w`` and ``1/w`` stay bounded even at ``pi`` in {0, 1}, so
    nothing is divided by ``pi`` or ``1 - pi``. Broadcasts over its inputs.
    """
    delta = np.asarray(delta, dtype=float)
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    omega, q = _weights(delta, pi)
    return (
        q * mu1
        + (1.0 - q) * mu0
        + a * (delta / omega) * (y - mu1)
        + (1.0 - a) * (1.0 / omega) * (y - mu0)
        + delta * (mu1 - mu0) * (a - pi) / (omega * omega)
    )


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    k: int
    seed: int | None = None

    def __post_init__(self):
        f = np.asarray(self.fold_of, dtype=np.int64)
        if f.size and (f.min() < 0 or f.max() >= self.k):
            raise ValueError("fold index out of range")
        f.setflags(write=False)
        object.__setattr__(self, "fold_of", f)

    def indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == j)


def assign_folds(a, k: int, seed: int) -> FoldAssignment:
    """Treatment-stratified random fold assignment.

    Every fold must hold at least one treated and one untreated unit, which
    guarantees both arms in every training split.
    """
    a = np.asarray(a)
    if not 2 <= k <= 20:
        raise ValueError(f"k_folds must lie in [2, 20], got {k}")
    for arm in (0, 1):
        count = int(np.sum(a == arm))
        if count < k:
            raise EstimationError(
                f"only {count} {'treated' if arm else 'untreated'} units for {k} folds; "
                "every fold needs both arms, use fewer folds"
            )
    folds = stratified_folds(a, k, np.random.default_rng(np.random.SeedSequence([seed, 0xF01D])))
    return FoldAssignment(folds, k, seed)


@dataclass(frozen=True, eq=False)
class NuisanceEstimates:
    pi_hat: np.ndarray
    mu1_hat: np.ndarray
    mu0_hat: np.ndarray
    folds: FoldAssignment | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = []
        for name in ("pi_hat", "mu1_hat", "mu0_hat"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} must be finite and within [0, 1]")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
            arrays.append(v)
        if len({v.size for v in arrays}) != 1:
            raise ValueError("nuisance vectors differ in length")

    @property
    def n(self) -> int:
        return self.pi_hat.size


@dataclass(frozen=True)
class LearnerConfig:
    """Learner rosters for the two nuisance functions.

    ``outcome_mode="pooled"`` fits one outcome model with the exposure appended
    as a final feature and evaluates it at A=1 and A=0; ``"per_arm"`` fits a
    separate model within each arm.
    """

    propensity: tuple[LearnerSpec, ...] = DEFAULT_ROSTER
    outcome: tuple[LearnerSpec, ...] = DEFAULT_ROSTER
    outcome_mode: Literal["pooled", "per_arm"] = "pooled"
    inner_folds: int = 10

    def __post_init__(self):
        object.__setattr__(self, "propensity", tuple(_spec(s) for s in self.propensity))
        object.__setattr__(self, "outcome", tuple(_spec(s) for s in self.outcome))
        if not self.propensity or not self.outcome:
            raise ValueError("learner rosters must be non-empty")
        if self.outcome_mode not in ("pooled", "per_arm"):
            raise ValueError(f"unknown outcome_mode {self.outcome_mode!r}")
        if self.inner_folds < 2:
            raise ValueError("inner_folds must be >= 2")

    @classmethod
    def uniform(cls, roster: Sequence, **kw) -> "LearnerConfig":
        return cls(propensity=tuple(roster), outcome=tuple(roster), **kw)

    def to_dict(self) -> dict:
        return {
            "propensity": [s.to_dict() for s in self.propensity],
            "outcome": [s.to_dict() for s in self.outcome],
            "outcome_mode": self.outcome_mode,
            "inner_folds": self.inner_folds,
        }


def _spec(s) -> LearnerSpec:
    return s if isinstance(s, LearnerSpec) else LearnerSpec.from_dict(s)


def _inner_seed(seed: int, fold: int, role: int) -> int:
    return int(np.random.SeedSequence([seed, fold, role]).generate_state(1)[0])


class _SingleMember:
    """A one-learner roster: the simplex is a single vertex, so no stacking CV."""

    def __init__(self, model, spec):
        self.model = model
        self.spec = spec

    def predict(self, x):
        return self.model.predict(x)

    def provenance(self) -> dict:
        return {"members": [self.spec.name], "weights": [1.0]}


def _fit_fold(frame: AnalysisFrame, folds: FoldAssignment, j: int, config: LearnerConfig, seed: int):
    test = folds.fold_of == j
    train = ~test
    x_tr, a_tr, y_tr = frame.x[train], frame.a[train], frame.y[train]
    x_te = frame.x[test]
    n_tr = x_tr.shape[0]

    def sl(specs, x, y, role):
        if len(specs) == 1:
            return _SingleMember(fit_learner(specs[0], x, y), specs[0])
        k = min(config.inner_folds, x.shape[0])
        return fit_super_learner(specs, x, y, k_folds=k, seed=_inner_seed(seed, j, role))

    ps = sl(config.propensity, x_tr, a_tr, 1)
    pi = ps.predict(x_te)
    if config.outcome_mode == "pooled":
        om = sl(config.outcome, np.column_stack([x_tr, a_tr]), y_tr, 2)
        ones, zeros = np.ones(x_te.shape[0]), np.zeros(x_te.shape[0])
        mu1 = om.predict(np.column_stack([x_te, ones]))
        mu0 = om.predict(np.column_stack([x_te, zeros]))
        outcome_prov = {"pooled": om.provenance()}
    else:
        treated = a_tr == 1
        om1 = sl(config.outcome, x_tr[treated], y_tr[treated], 3)
        om0 = sl(config.outcome, x_tr[~treated], y_tr[~treated], 4)
        mu1, mu0 = om1.predict(x_te), om0.predict(x_te)
        outcome_prov = {"treated": om1.provenance(), "untreated": om0.provenance()}
    prov = {"fold": j, "train_rows": int(n_tr), "propensity": ps.provenance(), "outcome": outcome_prov}
    return test, pi, mu1, mu0, prov


def cross_fit_nuisances(
    frame: AnalysisFrame,
    learner_config: LearnerConfig | None = None,
    k_folds: int = 2,
    seed: int = 0,
    n_jobs: int = 1,
) -> NuisanceEstimates:
    """Out-of-fold propensity and outcome-regression predictions.

    For each fold, nuisance models are fitted on the remaining folds and
    evaluated on the held-out one; with two folds this is the split-in-halves,
    swap-and-repeat scheme. ``n_jobs`` parallelizes over folds without
    changing results.
    """
    config = learner_config or LearnerConfig()
    folds = assign_folds(frame.a, k_folds, seed)
    pi = np.empty(frame.n)
    mu1 = np.empty(frame.n)
    mu0 = np.empty(frame.n)
    args = [(frame, folds, j, config, seed) for j in range(k_folds)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda t: _fit_fold(*t), args))
    else:
        results = [_fit_fold(*t) for t in args]
    provenance = {"learner_config": config.to_dict(), "folds": []}
    for test, p, m1, m0, prov in results:
        pi[test], mu1[test], mu0[test] = p, m1, m0
        provenance["folds"].append(prov)
    return NuisanceEstimates(pi, mu1, mu0, folds, provenance)


def plug_in_effect(nuisances: NuisanceEstimates, delta) -> float:
    """Outcome-regression average under the shifted propensities."""
    q = shift_propensity(_check_delta(delta), nuisances.pi_hat)
    return float(np.mean(q * nuisances.mu1_hat + (1.0 - q) * nuisances.mu0_hat))


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    phi: np.ndarray
    grid: DeltaGrid

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def column(self, delta: float) -> np.ndarray:
        return self.phi[:, self.grid.index_of(delta)]


def influence_matrix(frame: AnalysisFrame, nuisances: NuisanceEstimates, grid: DeltaGrid) -> InfluenceMatrix:
    if nuisances.n != frame.n:
        raise ValueError("nuisance vectors do not match the frame")
    col = lambda v: np.asarray(v, dtype=float)[:, None]  # noqa: E731
    phi = influence_value(
        grid.values[None, :],
        col(frame.a),
        col(frame.y),
        col(nuisances.pi_hat),
        col(nuisances.mu1_hat),
        col(nuisances.mu0_hat),
    )
    phi = np.ascontiguousarray(phi)
    phi.setflags(write=False)
    return InfluenceMatrix(phi, grid)


def curve_from_influence(infl: InfluenceMatrix, alpha: float = 0.05, metadata: dict | None = None) -> EffectCurve:
    n = infl.n
    if n < 2:
        raise EstimationError("need at least two units to estimate a variance")
    psi = infl.phi.mean(axis=0)
    sigma = infl.phi.std(axis=0, ddof=1)
    lo, hi = pointwise_ci(psi, sigma, n, alpha)
    return EffectCurve(
        delta=infl.grid.values,
        estimate=psi,
        sigma=sigma,
        pointwise_lo=lo,
        pointwise_hi=hi,
        n=n,
        alpha=alpha,
        metadata=dict(metadata or {}),
    )


def estimate_from_nuisances(
    frame: AnalysisFrame, nuisances: NuisanceEstimates, grid: DeltaGrid, alpha: float = 0.05
) -> tuple[EffectCurve, InfluenceMatrix]:
    infl = influence_matrix(frame, nuisances, grid)
    meta = {"outcome_label": frame.outcome_label, "stratum_label": frame.stratum_label}
    return curve_from_influence(infl, alpha, meta), infl


def estimate_curve(
    frame: AnalysisFrame,
    grid: DeltaGrid | None = None,
    learner_config: LearnerConfig | None = None,
    k_folds: int = 2,
    seed: int = 0,
    alpha: float = 0.05,
    n_jobs: int = 1,
) -> tuple[EffectCurve, InfluenceMatrix]:
    """Estimate ``psi(delta)`` across a grid with pointwise Wald intervals.

    The estimate is the column mean of the influence matrix and the standard
    error its column sample standard deviation over ``sqrt(n)``. Uniform bands
    are added separately by :func:`ipscurve.inference.uniform_band`.
    """
    grid = grid or DeltaGrid.from_range()
    nuis = cross_fit_nuisances(frame, learner_config, k_folds, seed, n_jobs=n_jobs)
    curve, infl = estimate_from_nuisances(frame, nuis, grid, alpha)
    curve.metadata.update({"seed": seed, "k_folds": k_folds, "nuisance_provenance": nuis.provenance})
    return curve, infl


__all__ = [
    "EPS",
    "DeltaGrid",
    "EstimationError",
    "FoldAssignment",
    "InfluenceMatrix",
    "LearnerConfig",
    "NuisanceEstimates",
    "assign_folds",
    "cross_fit_nuisances",
    "curve_from_influence",
    "estimate_curve",
    "estimate_from_nuisances",
    "influence_matrix",
    "influence_value",
    "plug_in_effect",
    "shift_propensity",
]
