"""Discrete-cell data-generating processes with exactly enumerable truth.

Each DGP is a finite list of covariate cells carrying a probability mass, a
true propensity and true outcome regressions, so ``psi(delta)`` and the exact
expectation of any per-unit statistic are finite sums. Replication harnesses
compare estimates against that truth.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .dataset import AnalysisFrame, EncodedColumn, EncodingMap
from .estimator import (
    DeltaGrid,
    InfluenceMatrix,
    LearnerConfig,
    NuisanceEstimates,
    cross_fit_nuisances,
    curve_from_influence,
    influence_matrix,
    influence_value,
    shift_propensity,
)
from .inference import BootstrapConfig, uniform_band
from .learners import LearnerSpec

log = logging.getLogger(__name__)

MAX_CELLS = 16


@dataclass(frozen=True)
class Cell:
    mass: float
    x: tuple[float, ...]
    pi: float
    mu1: float
    mu0: float


@dataclass(frozen=True)
class DgpSpec:
    cells: tuple[Cell, ...]
    label: str = "dgp"
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        cells = tuple(self.cells)
        object.__setattr__(self, "cells", cells)
        if not 1 <= len(cells) <= MAX_CELLS:
            raise ValueError(f"a DGP needs 1..{MAX_CELLS} cells")
        if any(c.mass <= 0 for c in cells):
            raise ValueError("cell masses must be positive")
        if abs(math.fsum(c.mass for c in cells) - 1.0) > 1e-12:
            raise ValueError("cell masses must sum to 1")
        for c in cells:
            if not all(0.0 <= v <= 1.0 for v in (c.pi, c.mu1, c.mu0)):
                raise ValueError("pi, mu1 and mu0 must lie in [0, 1]")
        if len({len(c.x) for c in cells}) != 1:
            raise ValueError("all cells need covariate vectors of one length")
        if len({tuple(c.x) for c in cells}) != len(cells):
            raise ValueError("cell covariate vectors must be distinct")
        names = self.covariate_names or tuple(f"x{j + 1}" for j in range(len(cells[0].x)))
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def mass(self) -> np.ndarray:
        return np.array([c.mass for c in self.cells])

    @property
    def pi(self) -> np.ndarray:
        return np.array([c.pi for c in self.cells])

    @property
    def mu1(self) -> np.ndarray:
        return np.array([c.mu1 for c in self.cells])

    @property
    def mu0(self) -> np.ndarray:
        return np.array([c.mu0 for c in self.cells])

    @property
    def x(self) -> np.ndarray:
        return np.array([c.x for c in self.cells], dtype=float)

    def treated_share(self) -> float:
        return math.fsum(c.mass * c.pi for c in self.cells)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "covariate_names": list(self.covariate_names),
            "cells": [{"mass": c.mass, "x": list(c.x), "pi": c.pi, "mu1": c.mu1, "mu0": c.mu0} for c in self.cells],
        }


@dataclass(frozen=True, eq=False)
class TruthCurve:
    delta: np.ndarray
    psi: np.ndarray

    def at(self, delta: float) -> float:
        j = np.flatnonzero(np.abs(self.delta - delta) <= 1e-9 * delta)
        if j.size == 0:
            raise ValueError(f"delta {delta:g} not in truth curve")
        return float(self.psi[j[0]])


def _deltas(grid) -> np.ndarray:
    if isinstance(grid, DeltaGrid):
        return grid.values
    return np.atleast_1d(np.asarray(grid, dtype=float))


def true_effect(dgp: DgpSpec, grid) -> TruthCurve:
    """Enumerate ``psi(delta) = sum_cells mass * (q*mu1 + (1-q)*mu0)``."""
    deltas = _deltas(grid)
    psi = np.empty(deltas.size)
    for j, d in enumerate(deltas):
        terms = []
        for c in dgp.cells:
            q = float(shift_propensity(d, c.pi))
            terms.append(c.mass * (q * c.mu1 + (1.0 - q) * c.mu0))
        psi[j] = math.fsum(terms)
    return TruthCurve(deltas, psi)


def literal_influence_value(delta, a, y, pi, mu1, mu0):
    """Influence value with both residual terms applied to every unit.

    This is the form lacking the ``a`` / ``1 - a`` indicators; it is biased
    even with true nuisances and exists only to document that bias. The
    ratios ``q/pi`` and ``(1-q)/(1-pi)`` are written as ``delta/w`` and
    ``1/w``, which are equal wherever both are defined.
    """
    delta = np.asarray(delta, dtype=float)
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    omega = 1.0 + (delta - 1.0) * pi
    q = delta * pi / omega
    return (
        q * mu1
        + (1.0 - q) * mu0
        + (delta / omega) * (y - mu1)
        + (1.0 / omega) * (y - mu0)
        + delta * (mu1 - mu0) * (a - pi) / (omega * omega)
    )


def expected_influence(
    dgp: DgpSpec,
    grid,
    pi_hat=None,
    mu1_hat=None,
    mu0_hat=None,
    formula: Literal["indicator", "literal"] = "indicator",
) -> np.ndarray:
    """Exact ``E[phi(delta)]`` by enumerating cells x A x Y.

    Nuisance values default to the truth; per-cell overrides give the exact
    large-sample mean under any (mis)specified limit.
    """
    deltas = _deltas(grid)
    fn = influence_value if formula == "indicator" else literal_influence_value
    pi_hat = dgp.pi if pi_hat is None else np.asarray(pi_hat, dtype=float)
    mu1_hat = dgp.mu1 if mu1_hat is None else np.asarray(mu1_hat, dtype=float)
    mu0_hat = dgp.mu0 if mu0_hat is None else np.asarray(mu0_hat, dtype=float)
    out = np.empty(deltas.size)
    for j, d in enumerate(deltas):
        terms = []
        for k, c in enumerate(dgp.cells):
            for a, y in itertools.product((0, 1), (0, 1)):
                pa = c.pi if a else 1.0 - c.pi
                mu = c.mu1 if a else c.mu0
                py = mu if y else 1.0 - mu
                w = c.mass * pa * py
                if w == 0.0:
                    continue
                terms.append(w * float(fn(d, a, y, pi_hat[k], mu1_hat[k], mu0_hat[k])))
        out[j] = math.fsum(terms)
    return out


def literal_extra_term(dgp: DgpSpec, grid) -> np.ndarray:
    """Closed-form bias of the literal form under true nuisances.

    The missing indicators contribute ``(q/pi)(1-pi)(mu0-mu1)`` from the
    untreated and ``((1-q)/(1-pi)) pi (mu1-mu0)`` from the treated, summed
    over cells: ``sum mass * (mu1-mu0) * (pi - delta*(1-pi)) / w``.
    """
    deltas = _deltas(grid)
    out = np.empty(deltas.size)
    for j, d in enumerate(deltas):
        terms = []
        for c in dgp.cells:
            omega = 1.0 + (d - 1.0) * c.pi
            terms.append(c.mass * (c.mu1 - c.mu0) * (c.pi - d * (1.0 - c.pi)) / omega)
        out[j] = math.fsum(terms)
    return out


def sample_dgp(dgp: DgpSpec, n: int, seed: int, return_cells: bool = False):
    """Draw ``n`` i.i.d. units: cell by mass, then A ~ Bern(pi), Y ~ Bern(mu_A)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    mass = dgp.mass
    cells = rng.choice(len(dgp.cells), size=n, p=mass / mass.sum())
    a = (rng.random(n) < dgp.pi[cells]).astype(np.int8)
    mu = np.where(a == 1, dgp.mu1[cells], dgp.mu0[cells])
    y = (rng.random(n) < mu).astype(np.int8)
    emap = EncodingMap(tuple(EncodedColumn(name, name, "numeric") for name in dgp.covariate_names))
    frame = AnalysisFrame(x=dgp.x[cells], a=a, y=y, encoding_map=emap, outcome_label="y")
    return (frame, cells) if return_cells else frame


def oracle_nuisances(dgp: DgpSpec, cells: np.ndarray) -> NuisanceEstimates:
    return NuisanceEstimates(dgp.pi[cells], dgp.mu1[cells], dgp.mu0[cells], provenance={"oracle": dgp.label})


def nuisance_limits(dgp: DgpSpec, propensity: str, outcome: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell large-sample limits of correct (``"true"``) or constant learners.

    The constant propensity learner converges to P(A=1); per-arm constant
    outcome learners converge to E[Y | A=a].
    """
    k = len(dgp.cells)
    m, pi = dgp.mass, dgp.pi
    pa = float(m @ pi)
    pi_lim = pi if propensity == "true" else np.full(k, pa)
    if outcome == "true":
        return pi_lim, dgp.mu1, dgp.mu0
    ey1 = float((m * pi) @ dgp.mu1 / pa)
    ey0 = float((m * (1 - pi)) @ dgp.mu0 / (1 - pa))
    return pi_lim, np.full(k, ey1), np.full(k, ey0)


# --- bundled DGPs ------------------------------------------------------------------


def single_cell_dgp() -> DgpSpec:
    return DgpSpec((Cell(1.0, (0.0,), 0.5, 0.8, 0.2),), "single_cell")


def two_cell_dgp() -> DgpSpec:
    """Confounded two-cell design: exposure and outcome both rise with x."""
    return DgpSpec(
        (
            Cell(0.5, (0.0,), 0.3, 0.3, 0.1),
            Cell(0.5, (1.0,), 0.6, 0.9, 0.7),
        ),
        "two_cell",
    )


# Frozen by a one-time least-squares search against the enumeration oracle so
# the truth matches P(A=1) = 0.2642, psi(0.1) = 0.56, psi(1) = 0.58,
# psi(10) = 0.65; rounded to four decimals. Covariates: prior-arrest history,
# behavioral-health diagnosis, male.
PROBATION_COVARIATES = ("prior_arrests", "behavioral_health", "male")
PROBATION_PREVALENCE = (0.5, 0.4, 0.85)
PROBATION_PROPENSITY_LOGIT = (-2.4882, 1.5978, 0.6, 0.3)
PROBATION_OUTCOME_LOGIT = (-0.4409, 0.7, 0.4, 0.2)
PROBATION_EXPOSURE_LOGIT = 1.2501
PROBATION_EXPOSURE_PRIOR_INTERACTION = -0.9 * 1.2501


def _expit(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v))


def probation_like_dgp() -> DgpSpec:
    """Eight-cell stand-in for a probation cohort.

    Propensity is logistic-additive in the covariates; the exposure effect on
    the outcome log-odds is much smaller for people with prior arrests, who
    are also the ones most likely exposed. All per-cell effects are positive,
    so the truth curve is increasing in delta.
    """
    cells = []
    for bits in itertools.product((0, 1), repeat=3):
        mass = 1.0
        for b, p in zip(bits, PROBATION_PREVALENCE):
            mass *= p if b else 1.0 - p
        g = PROBATION_PROPENSITY_LOGIT
        b0 = PROBATION_OUTCOME_LOGIT
        pi = _expit(g[0] + sum(c * v for c, v in zip(g[1:], bits)))
        base = b0[0] + sum(c * v for c, v in zip(b0[1:], bits))
        effect = PROBATION_EXPOSURE_LOGIT + PROBATION_EXPOSURE_PRIOR_INTERACTION * bits[0]
        cells.append(Cell(mass, tuple(float(b) for b in bits), pi, _expit(base + effect), _expit(base)))
    # masses are products of prevalences; renormalize against rounding
    total = math.fsum(c.mass for c in cells)
    cells = [Cell(c.mass / total, c.x, c.pi, c.mu1, c.mu0) for c in cells]
    return DgpSpec(tuple(cells), "probation_like", PROBATION_COVARIATES)


BUNDLED_DGPS = {
    "single_cell": single_cell_dgp,
    "two_cell": two_cell_dgp,
    "probation_like": probation_like_dgp,
}


# --- replication harness -----------------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    """How each replicate is estimated.

    ``nuisance="oracle"`` injects the true per-cell nuisances (no learning);
    ``formula="literal"`` swaps in the indicator-free influence values.
    ``bootstrap=None`` skips uniform bands.
    """

    grid: DeltaGrid = field(default_factory=DeltaGrid.from_range)
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    nuisance: Literal["learned", "oracle"] = "learned"
    formula: Literal["indicator", "literal"] = "indicator"
    k_folds: int = 2
    alpha: float = 0.05
    bootstrap: BootstrapConfig | None = None

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.construction or [float(v) for v in self.grid.values],
            "learners": self.learners.to_dict() if self.nuisance == "learned" else None,
            "nuisance": self.nuisance,
            "formula": self.formula,
            "k_folds": self.k_folds,
            "alpha": self.alpha,
            "bootstrap": None
            if self.bootstrap is None
            else {"replicates": self.bootstrap.replicates, "multiplier": self.bootstrap.multiplier},
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ReplicateEstimates:
    estimates: np.ndarray  # R x G
    std_errors: np.ndarray
    pointwise_cover: np.ndarray  # R x G bool
    uniform_cover: np.ndarray | None  # R bool
    critical_values: np.ndarray | None


@dataclass(frozen=True, eq=False)
class SimulationReport:
    label: str
    delta: np.ndarray
    truth: np.ndarray
    mean_estimate: np.ndarray
    bias: np.ndarray
    bias_se: np.ndarray
    rmse: np.ndarray
    pointwise_coverage: np.ndarray
    uniform_coverage: float | None
    replicates: int
    n: int
    config_digest: str
    seed: int
    raw: ReplicateEstimates | None = None

    def max_abs_bias(self) -> float:
        return float(np.max(np.abs(self.bias)))

    def row(self, delta: float) -> dict:
        j = np.flatnonzero(np.abs(self.delta - delta) <= 1e-9 * delta)
        if j.size == 0:
            raise ValueError(f"delta {delta:g} not in report")
        return self.records()[int(j[0])]

    def records(self) -> list[dict]:
        return [
            {
                "delta": float(self.delta[j]),
                "truth": float(self.truth[j]),
                "mean_estimate": float(self.mean_estimate[j]),
                "bias": float(self.bias[j]),
                "bias_se": float(self.bias_se[j]),
                "rmse": float(self.rmse[j]),
                "pointwise_coverage": float(self.pointwise_coverage[j]),
            }
            for j in range(self.delta.size)
        ]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "label": self.label,
            "replicates": self.replicates,
            "n": self.n,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "uniform_coverage": self.uniform_coverage,
            "max_abs_bias": self.max_abs_bias(),
            "rows": self.records(),
        }

    def to_csv(self) -> str:
        cols = ["delta", "truth", "mean_estimate", "bias", "bias_se", "rmse", "pointwise_coverage"]
        lines = [
            f"# schema_version=1 label={self.label} replicates={self.replicates} n={self.n} "
            f"seed={self.seed} config_digest={self.config_digest} uniform_coverage={self.uniform_coverage}",
            ",".join(cols),
        ]
        for rec in self.records():
            lines.append(",".join(format(rec[c], ".17g") for c in cols))
        return "\n".join(lines) + "\n"


def replicate_seeds(seed: int, r: int) -> tuple[int, int, int]:
    """Independent (sample, estimation, bootstrap) seeds for replicate ``r``."""
    s = np.random.SeedSequence([int(seed), int(r)]).generate_state(3)
    return int(s[0]), int(s[1]), int(s[2])


def _one_replicate(dgp: DgpSpec, config: SimulationConfig, n: int, seed: int, r: int, truth: np.ndarray):
    s_sample, s_est, s_boot = replicate_seeds(seed, r)
    frame, cells = sample_dgp(dgp, n, s_sample, return_cells=True)
    if config.nuisance == "oracle":
        nuis = oracle_nuisances(dgp, cells)
    else:
        nuis = cross_fit_nuisances(frame, config.learners, config.k_folds, s_est)
    if config.formula == "literal":
        phi = literal_influence_value(
            config.grid.values[None, :],
            frame.a[:, None].astype(float),
            frame.y[:, None].astype(float),
            nuis.pi_hat[:, None],
            nuis.mu1_hat[:, None],
            nuis.mu0_hat[:, None],
        )
        infl = InfluenceMatrix(phi, config.grid)
    else:
        infl = influence_matrix(frame, nuis, config.grid)
    curve = curve_from_influence(infl, config.alpha)
    cover = (curve.pointwise_lo <= truth) & (truth <= curve.pointwise_hi)
    ucover, cval = None, None
    if config.bootstrap is not None:
        boot_cfg = BootstrapConfig(config.bootstrap.replicates, config.bootstrap.multiplier, config.alpha, s_boot)
        banded = uniform_band(infl, curve, boot_cfg)
        ucover = bool(np.all((banded.band_lo <= truth) & (truth <= banded.band_hi)))
        cval = banded.critical_value
    return curve.estimate, curve.std_error, cover, ucover, cval


def run_replications(
    dgp: DgpSpec,
    config: SimulationConfig,
    replicates: int,
    n: int,
    seed: int,
    n_jobs: int = 1,
    label: str | None = None,
) -> SimulationReport:
    """Repeat sample -> estimate -> intervals and aggregate against the truth.

    Each replicate's seeds depend only on ``(seed, replicate index)`` and the
    aggregation runs in index order, so reports are reproducible bit-for-bit
    regardless of ``n_jobs``.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    truth = true_effect(dgp, config.grid).psi
    args = range(replicates)
    work = lambda r: _one_replicate(dgp, config, n, seed, r, truth)  # noqa: E731
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, args))
    else:
        results = [work(r) for r in args]
    return aggregate_replicates(
        label or dgp.label, config.grid.values, truth, results, n, config.digest(), seed
    )


def aggregate_replicates(label, delta, truth, results, n: int, digest: str, seed: int) -> SimulationReport:
    """Summarize per-replicate ``(estimate, se, cover, uniform_cover, c)`` tuples.

    ``uniform_cover`` and ``c`` may be ``None`` when no bands were computed.
    """
    replicates = len(results)
    est = np.array([r[0] for r in results])
    se = np.array([r[1] for r in results])
    cover = np.array([r[2] for r in results])
    banded = results[0][3] is not None
    ucover = np.array([r[3] for r in results]) if banded else None
    cvals = np.array([r[4] for r in results]) if banded else None
    err = est - truth
    bias = err.mean(axis=0)
    rmse = np.maximum(np.sqrt(np.mean(err * err, axis=0)), np.abs(bias))
    return SimulationReport(
        label=label,
        delta=np.asarray(delta, dtype=float),
        truth=np.asarray(truth, dtype=float),
        mean_estimate=est.mean(axis=0),
        bias=bias,
        bias_se=est.std(axis=0, ddof=1) / math.sqrt(replicates),
        rmse=rmse,
        pointwise_coverage=cover.mean(axis=0),
        uniform_coverage=None if ucover is None else float(ucover.mean()),
        replicates=replicates,
        n=n,
        config_digest=digest,
        seed=seed,
        raw=ReplicateEstimates(est, se, cover, ucover, cvals),
    )


CORRECT_LEARNER = LearnerSpec("ridge_logistic", {"penalty": 1e-3})
WRONG_LEARNER = LearnerSpec("constant")
MISSPECIFICATION_MODES = ("both_correct", "ps_wrong", "or_wrong", "both_wrong", "literal_formula")


def misspecification_config(mode: str, grid: DeltaGrid | None = None) -> SimulationConfig:
    """Learner setup for one misspecification mode on a discrete-covariate DGP.

    Correct models are per-arm ridge logistic fits, saturated when the single
    covariate is binary; a wrong model is the constant learner.
    """
    grid = grid or DeltaGrid.from_range()
    if mode == "literal_formula":
        return SimulationConfig(grid=grid, nuisance="oracle", formula="literal")
    if mode not in MISSPECIFICATION_MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MISSPECIFICATION_MODES}")
    ps = WRONG_LEARNER if mode in ("ps_wrong", "both_wrong") else CORRECT_LEARNER
    om = WRONG_LEARNER if mode in ("or_wrong", "both_wrong") else CORRECT_LEARNER
    learners = LearnerConfig(propensity=(ps,), outcome=(om,), outcome_mode="per_arm")
    return SimulationConfig(grid=grid, learners=learners)


def misspecification_experiment(
    dgp: DgpSpec,
    mode: str,
    replicates: int = 200,
    n: int = 5000,
    seed: int = 0,
    n_jobs: int = 1,
) -> SimulationReport:
    config = misspecification_config(mode)
    return run_replications(dgp, config, replicates, n, seed, n_jobs=n_jobs, label=f"{dgp.label}:{mode}")


__all__ = [
    "BUNDLED_DGPS",
    "Cell",
    "DgpSpec",
    "MISSPECIFICATION_MODES",
    "SimulationConfig",
    "SimulationReport",
    "aggregate_replicates",
    "TruthCurve",
    "expected_influence",
    "literal_extra_term",
    "literal_influence_value",
    "misspecification_config",
    "misspecification_experiment",
    "nuisance_limits",
    "oracle_nuisances",
    "probation_like_dgp",
    "run_replications",
    "sample_dgp",
    "single_cell_dgp",
    "true_effect",
    "two_cell_dgp",
]
