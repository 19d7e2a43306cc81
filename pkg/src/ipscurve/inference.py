"""Pointwise intervals, multiplier-bootstrap uniform bands and delta contrasts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Literal

import numpy as np

from . import _accel
from ._accel import optional_njit, prange

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0
CHUNK = 256


def normal_quantile(alpha: float) -> float:
    """Two-sided critical value ``z_{1 - alpha/2}``; 0 when ``alpha == 1``."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha == 1:
        return 0.0
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def pointwise_ci(psi_hat, sigma_hat, n: int, alpha: float = 0.05):
    """Wald interval ``psi_hat +/- z * sigma_hat / sqrt(n)``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    if np.any(sigma_hat < 0):
        raise ValueError("sigma_hat must be nonnegative")
    half = normal_quantile(alpha) * sigma_hat / math.sqrt(n)
    psi_hat = np.asarray(psi_hat, dtype=float)
    lo, hi = psi_hat - half, psi_hat + half
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


@dataclass(frozen=True, eq=False)
class EffectCurve:
    delta: np.ndarray
    estimate: np.ndarray
    sigma: np.ndarray
    pointwise_lo: np.ndarray
    pointwise_hi: np.ndarray
    n: int
    alpha: float
    band_lo: np.ndarray | None = None
    band_hi: np.ndarray | None = None
    critical_value: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def std_error(self) -> np.ndarray:
        return self.sigma / math.sqrt(self.n)

    @property
    def has_bands(self) -> bool:
        return self.band_lo is not None

    @property
    def bands_contain_pointwise(self) -> bool | None:
        if self.critical_value is None:
            return None
        return self.critical_value >= normal_quantile(self.alpha)

    def interval(self, delta: float, use: Literal["pointwise", "uniform"] = "uniform") -> tuple[float, float]:
        j = _grid_index(self.delta, delta)
        if use == "pointwise":
            return float(self.pointwise_lo[j]), float(self.pointwise_hi[j])
        if use == "uniform":
            if not self.has_bands:
                raise ValueError("curve has no uniform band; run uniform_band first")
            return float(self.band_lo[j]), float(self.band_hi[j])
        raise ValueError(f"unknown interval type {use!r}")

    def at(self, delta: float) -> float:
        return float(self.estimate[_grid_index(self.delta, delta)])

    def to_records(self) -> list[dict]:
        rows = []
        for j in range(self.delta.size):
            rows.append(
                {
                    "delta": float(self.delta[j]),
                    "estimate": float(self.estimate[j]),
                    "std_error": float(self.std_error[j]),
                    "pointwise_lo": float(self.pointwise_lo[j]),
                    "pointwise_hi": float(self.pointwise_hi[j]),
                    "band_lo": None if self.band_lo is None else float(self.band_lo[j]),
                    "band_hi": None if self.band_hi is None else float(self.band_hi[j]),
                }
            )
        return rows


def _grid_index(grid: np.ndarray, delta: float) -> int:
    delta = float(delta)
    hit = np.flatnonzero(np.abs(grid - delta) <= 1e-9 * abs(delta))
    if hit.size == 0:
        nearest = grid[np.argmin(np.abs(np.log(grid) - np.log(delta)))] if delta > 0 else grid[0]
        raise ValueError(f"delta {delta:g} is not on the grid; nearest grid point is {nearest:.10g}")
    return int(hit[0])


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 5000
    multiplier: Literal["rademacher", "gaussian"] = "rademacher"
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 100:
            raise ValueError("bootstrap replicates must be an integer >= 100")
        if self.multiplier not in ("rademacher", "gaussian"):
            raise ValueError(f"unknown multiplier {self.multiplier!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


# --- counter-based multipliers -----------------------------------------------------
# Multiplier for (replicate b, unit i) is a pure function of (seed, b*n + i): a
# SplitMix64 finalizer applied to key + (counter + 1) * golden. Any schedule of
# replicates therefore sees identical draws.


def stream_key(seed: int) -> np.uint64:
    z = (int(seed) * 0x2545F4914F6CDD1D + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return np.uint64(z ^ (z >> 31))


@optional_njit(cache=True, inline="always")
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@optional_njit(cache=True, inline="always")
def _multiplier_nb(key, counter, gaussian):
    if not gaussian:
        w = _mix_nb(key + (counter + np.uint64(1)) * np.uint64(_GOLDEN))
        return 1.0 if (w >> np.uint64(63)) == np.uint64(0) else -1.0
    c2 = counter * np.uint64(2)
    w1 = _mix_nb(key + (c2 + np.uint64(1)) * np.uint64(_GOLDEN))
    w2 = _mix_nb(key + (c2 + np.uint64(2)) * np.uint64(_GOLDEN))
    u1 = (float(w1 >> np.uint64(11)) + 1.0) * _INV_2_53
    u2 = float(w2 >> np.uint64(11)) * _INV_2_53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


@optional_njit(cache=True, parallel=True, nogil=True)
def _replicate_sums_nb(z, key, replicates, gaussian):
    n, g = z.shape
    out = np.zeros((replicates, g))
    root = math.sqrt(n)
    for b in prange(replicates):
        acc = np.zeros(g)
        base = np.uint64(b) * np.uint64(n)
        for i in range(n):
            xi = _multiplier_nb(key, base + np.uint64(i), gaussian)
            for j in range(g):
                acc[j] += xi * z[i, j]
        for j in range(g):
            out[b, j] = acc[j] / root
    return out


def _mix_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def multipliers(seed: int, replicates, n: int, kind: str = "rademacher") -> np.ndarray:
    """Multiplier draws for the given replicate indices, shape ``(len(replicates), n)``."""
    key = stream_key(seed)
    b = np.asarray(replicates, dtype=np.uint64).reshape(-1, 1)
    counter = b * np.uint64(n) + np.arange(n, dtype=np.uint64)[None, :]
    golden = np.uint64(_GOLDEN)
    with np.errstate(over="ignore"):
        if kind == "rademacher":
            w = _mix_np(key + (counter + np.uint64(1)) * golden)
            return np.where((w >> np.uint64(63)) == 0, 1.0, -1.0)
        c2 = counter * np.uint64(2)
        w1 = _mix_np(key + (c2 + np.uint64(1)) * golden)
        w2 = _mix_np(key + (c2 + np.uint64(2)) * golden)
    u1 = ((w1 >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    u2 = (w2 >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def _replicate_sums_np(z, seed, replicates, kind):
    n, g = z.shape
    out = np.empty((replicates, g))
    root = math.sqrt(n)
    for start in range(0, replicates, CHUNK):
        idx = np.arange(start, min(start + CHUNK, replicates))
        out[idx] = multipliers(seed, idx, n, kind) @ z / root
    return out


def replicate_sums(z: np.ndarray, config: BootstrapConfig, use_numba: bool | None = None) -> np.ndarray:
    """``n^{-1/2} * sum_i xi_bi * z_i(delta)`` for every replicate and grid point."""
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    z = np.ascontiguousarray(z, dtype=np.float64)
    if use_numba:
        gaussian = config.multiplier == "gaussian"
        return _replicate_sums_nb(z, stream_key(config.seed), int(config.replicates), gaussian)
    return _replicate_sums_np(z, config.seed, int(config.replicates), config.multiplier)


def standardized_influence(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered, scaled influence values; zero-variance columns map to zeros."""
    psi = phi.mean(axis=0)
    sigma = phi.std(axis=0, ddof=1)
    safe = np.where(sigma > 0, sigma, 1.0)
    z = np.where(sigma > 0, (phi - psi) / safe, 0.0)
    return z, psi, sigma


def empirical_quantile(values: np.ndarray, level: float) -> float:
    """Inverted-CDF quantile: the smallest order statistic m with m/B >= level."""
    s = np.sort(np.asarray(values, dtype=float))
    b = s.size
    m = math.ceil(b * level - 1e-9)
    m = min(max(m, 1), b)
    return float(s[m - 1])


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    sums: np.ndarray
    sup: np.ndarray
    critical_value: float
    coordinate_quantiles: np.ndarray


def bootstrap_sup(phi: np.ndarray, config: BootstrapConfig) -> BootstrapResult:
    z, _, _ = standardized_influence(np.asarray(phi, dtype=float))
    sums = replicate_sums(z, config)
    sup = np.abs(sums).max(axis=1)
    level = 1.0 - config.alpha
    c = empirical_quantile(sup, level)
    coord = np.array([empirical_quantile(np.abs(sums[:, j]), level) for j in range(sums.shape[1])])
    return BootstrapResult(sums, sup, c, coord)


def uniform_band(infl, curve: EffectCurve, config: BootstrapConfig | None = None) -> EffectCurve:
    """Add simultaneous bands ``psi +/- c * sigma / sqrt(n)`` over the whole grid.

    ``c`` is the (1 - alpha) inverted-CDF quantile of the bootstrap supremum
    ``max_delta |n^{-1/2} sum_i xi_i z_i(delta)|`` with ``z`` the standardized
    influence values.
    """
    config = config or BootstrapConfig(alpha=curve.alpha)
    grid = infl.grid.values
    if grid.shape != curve.delta.shape or not np.allclose(grid, curve.delta, rtol=1e-12, atol=0):
        raise ValueError("influence matrix and curve are on different grids")
    if infl.phi.shape[0] != curve.n:
        raise ValueError("influence matrix and curve disagree on n")
    boot = bootstrap_sup(infl.phi, config)
    half = boot.critical_value * curve.sigma / math.sqrt(curve.n)
    meta = dict(curve.metadata)
    z = normal_quantile(config.alpha)
    meta["bootstrap"] = {
        "replicates": int(config.replicates),
        "multiplier": config.multiplier,
        "alpha": config.alpha,
        "seed": int(config.seed),
        "critical_value": boot.critical_value,
        "pointwise_z": z,
        "bands_contain_pointwise": bool(boot.critical_value >= z),
    }
    return replace(
        curve,
        band_lo=curve.estimate - half,
        band_hi=curve.estimate + half,
        critical_value=boot.critical_value,
        metadata=meta,
    )


@dataclass(frozen=True)
class ContrastResult:
    delta_lo: float
    delta_hi: float
    interval_lo: tuple[float, float]
    interval_hi: tuple[float, float]
    overlap: bool
    decision: Literal["reject", "fail_to_reject"]
    method: str
    difference: float | None = None
    difference_interval: tuple[float, float] | None = None
    difference_se: float | None = None

    def to_dict(self) -> dict:
        return {
            "delta_lo": self.delta_lo,
            "delta_hi": self.delta_hi,
            "interval_lo": list(self.interval_lo),
            "interval_hi": list(self.interval_hi),
            "overlap": self.overlap,
            "decision": self.decision,
            "method": self.method,
            "difference": self.difference,
            "difference_interval": None if self.difference_interval is None else list(self.difference_interval),
            "difference_se": self.difference_se,
        }


def intervals_overlap(first: tuple[float, float], second: tuple[float, float]) -> bool:
    return not (first[1] < second[0] or second[1] < first[0])


def contrast_overlap_test(
    curve: EffectCurve,
    delta_lo: float = 0.1,
    delta_hi: float = 10.0,
    use: Literal["pointwise", "uniform"] = "uniform",
) -> ContrastResult:
    """Reject equality of ``psi`` at two deltas iff their intervals are disjoint."""
    lo = curve.interval(delta_lo, use)
    hi = curve.interval(delta_hi, use)
    overlap = intervals_overlap(lo, hi)
    return ContrastResult(
        float(delta_lo),
        float(delta_hi),
        lo,
        hi,
        overlap,
        "fail_to_reject" if overlap else "reject",
        f"overlap_{use}",
    )


def contrast_difference(infl, delta_lo: float, delta_hi: float, alpha: float = 0.05) -> ContrastResult:
    """Wald test of ``psi(delta_hi) - psi(delta_lo)`` from per-unit influence differences.

    Sharper than the overlap check, which is conservative.
    """
    phi_lo = infl.column(delta_lo)
    phi_hi = infl.column(delta_hi)
    n = phi_lo.size
    z = normal_quantile(alpha)
    diff = phi_hi - phi_lo
    est = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(n))
    ci = (est - z * se, est + z * se)

    def wald(col):
        m, s = float(col.mean()), float(col.std(ddof=1) / math.sqrt(n))
        return (m - z * s, m + z * s)

    reject = ci[0] > 0 or ci[1] < 0
    return ContrastResult(
        float(delta_lo),
        float(delta_hi),
        wald(phi_lo),
        wald(phi_hi),
        not reject,
        "reject" if reject else "fail_to_reject",
        "difference",
        difference=est,
        difference_interval=ci,
        difference_se=se,
    )
