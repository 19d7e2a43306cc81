"""Named simulation suites with frozen pass/fail thresholds.

Each suite runs one or more replication experiments, writes their reports
and a ``<suite>_summary.json`` listing every check, and reports whether all
checks passed. The thresholds below were fixed once from calibration runs
against the enumeration oracle and are not tuned per run.
"""
from __future__ import annotations

import json
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import save_frame
from .estimator import DeltaGrid
from .inference import BootstrapConfig
from .pipeline import RunConfig, run_estimate
from .simulate import (
    SimulationConfig,
    SimulationReport,
    aggregate_replicates,
    literal_extra_term,
    misspecification_experiment,
    probation_like_dgp,
    replicate_seeds,
    run_replications,
    sample_dgp,
    single_cell_dgp,
    true_effect,
    two_cell_dgp,
)

ORACLE_BIAS_SE_MULT = 3.0
COVERAGE_POINTWISE_RANGE = (0.92, 0.98)
COVERAGE_UNIFORM_MIN = 0.93
DR_BOTH_CORRECT_MAX = 0.01
DR_SINGLE_WRONG_MAX = 0.015
DR_BOTH_WRONG_FACTOR = 3.0
LITERAL_DELTA = 10.0
LITERAL_MIN_BIAS = 0.05
LITERAL_MATCH_SE = 3.0
PROBATION_ANCHORS = {0.1: 0.56, 1.0: 0.58, 10.0: 0.65}
PROBATION_TREATED_SHARE = 0.264
PROBATION_N = 2453
PROBATION_MIN_BAND_HIT = 0.90
PROBATION_MIN_REJECT = 0.5

SUITE_DEFAULTS = {
    "oracle_consistency": {"reps": 500, "n": 2000, "seed": 20240601},
    "coverage": {"reps": 500, "n": 2000, "seed": 20240602},
    "double_robustness": {"reps": 200, "n": 5000, "seed": 20240603},
    "literal_formula_bias": {"reps": 200, "n": 5000, "seed": 20240604},
    "probation_like": {"reps": 50, "n": PROBATION_N, "seed": 20240605},
}


@dataclass
class Check:
    name: str
    passed: bool
    observed: float
    threshold: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "observed": self.observed, "threshold": self.threshold}


@dataclass
class SuiteResult:
    suite: str
    reps: int
    n: int
    seed: int
    checks: list[Check] = field(default_factory=list)
    reports: dict[str, SimulationReport] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "suite": self.suite,
            "reps": self.reps,
            "n": self.n,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "reports": sorted(self.reports),
            **self.extra,
        }

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for key, rep in self.reports.items():
            stem = key.replace(":", "_")
            (out / f"{stem}.csv").write_text(rep.to_csv(), encoding="utf-8")
            (out / f"{stem}.json").write_text(json.dumps(rep.to_dict(), indent=2) + "\n", encoding="utf-8")
            paths += [out / f"{stem}.csv", out / f"{stem}.json"]
        summary = out / f"{self.suite}_summary.json"
        summary.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return paths + [summary]


def _oracle_consistency(reps, n, seed, n_jobs) -> SuiteResult:
    res = SuiteResult("oracle_consistency", reps, n, seed)
    cfg = SimulationConfig(nuisance="oracle")
    for i, dgp in enumerate((single_cell_dgp(), two_cell_dgp())):
        rep = run_replications(dgp, cfg, reps, n, seed + i, n_jobs=n_jobs, label=f"oracle_{dgp.label}")
        res.reports[rep.label] = rep
        ratio = np.abs(rep.bias) / np.maximum(rep.bias_se, 1e-300)
        res.checks.append(
            Check(f"{dgp.label}: max |bias|/SE over grid", bool(np.all(ratio <= ORACLE_BIAS_SE_MULT)),
                  float(ratio.max()), f"<= {ORACLE_BIAS_SE_MULT}")
        )
    return res


def _coverage(reps, n, seed, n_jobs) -> SuiteResult:
    res = SuiteResult("coverage", reps, n, seed)
    cfg = SimulationConfig(bootstrap=BootstrapConfig(replicates=5000))
    rep = run_replications(probation_like_dgp(), cfg, reps, n, seed, n_jobs=n_jobs, label="coverage_probation_like")
    res.reports[rep.label] = rep
    lo, hi = COVERAGE_POINTWISE_RANGE
    pw = rep.pointwise_coverage
    res.checks += [
        Check("min pointwise coverage", bool(pw.min() >= lo), float(pw.min()), f">= {lo}"),
        Check("max pointwise coverage", bool(pw.max() <= hi), float(pw.max()), f"<= {hi}"),
        Check("uniform band coverage", bool(rep.uniform_coverage >= COVERAGE_UNIFORM_MIN),
              float(rep.uniform_coverage), f">= {COVERAGE_UNIFORM_MIN}"),
    ]
    return res


def _double_robustness(reps, n, seed, n_jobs) -> SuiteResult:
    res = SuiteResult("double_robustness", reps, n, seed)
    dgp = two_cell_dgp()
    bias = {}
    for mode in ("both_correct", "ps_wrong", "or_wrong", "both_wrong"):
        rep = misspecification_experiment(dgp, mode, reps, n, seed, n_jobs=n_jobs)
        res.reports[f"dr_{mode}"] = rep
        bias[mode] = rep.max_abs_bias()
    single = max(bias["ps_wrong"], bias["or_wrong"])
    floor = DR_BOTH_WRONG_FACTOR * max(single, DR_SINGLE_WRONG_MAX)
    res.checks += [
        Check("both_correct max |bias|", bias["both_correct"] < DR_BOTH_CORRECT_MAX, bias["both_correct"],
              f"< {DR_BOTH_CORRECT_MAX}"),
        Check("ps_wrong max |bias|", bias["ps_wrong"] < DR_SINGLE_WRONG_MAX, bias["ps_wrong"],
              f"< {DR_SINGLE_WRONG_MAX}"),
        Check("or_wrong max |bias|", bias["or_wrong"] < DR_SINGLE_WRONG_MAX, bias["or_wrong"],
              f"< {DR_SINGLE_WRONG_MAX}"),
        Check("both_wrong max |bias|", bias["both_wrong"] > floor, bias["both_wrong"],
              f"> {DR_BOTH_WRONG_FACTOR} x max(single-wrong max, {DR_SINGLE_WRONG_MAX}) = {floor:.4g}"),
    ]
    res.extra["max_abs_bias"] = bias
    return res


def _literal_formula_bias(reps, n, seed, n_jobs) -> SuiteResult:
    res = SuiteResult("literal_formula_bias", reps, n, seed)
    dgp = single_cell_dgp()
    rep = misspecification_experiment(dgp, "literal_formula", reps, n, seed, n_jobs=n_jobs)
    res.reports["literal_formula_single_cell"] = rep
    row = rep.row(LITERAL_DELTA)
    j = int(np.flatnonzero(np.isclose(rep.delta, LITERAL_DELTA))[0])
    expected = float(literal_extra_term(dgp, rep.delta)[j])
    gap = abs(row["bias"] - expected) / row["bias_se"]
    res.checks += [
        Check(f"|bias| at delta={LITERAL_DELTA:g}", abs(row["bias"]) > LITERAL_MIN_BIAS, abs(row["bias"]),
              f"> {LITERAL_MIN_BIAS}"),
        Check("|bias - analytic extra term| / SE", gap <= LITERAL_MATCH_SE, gap, f"<= {LITERAL_MATCH_SE}"),
    ]
    res.extra["analytic_extra_term"] = expected
    return res


def probation_run_config(seed: int, replicates: int = 5000) -> dict:
    dgp = probation_like_dgp()
    return {
        "schema": {"outcome_column": "y", "treatment_column": "a", "covariate_columns": list(dgp.covariate_names)},
        "seed": int(seed),
        "bootstrap": {"replicates": replicates},
    }


def _probation_like(reps, n, seed, n_jobs) -> SuiteResult:
    res = SuiteResult("probation_like", reps, n, seed)
    dgp = probation_like_dgp()
    grid = DeltaGrid.from_range()
    truth = true_effect(dgp, grid)
    share = dgp.treated_share()
    for delta, anchor in PROBATION_ANCHORS.items():
        tol = 0.005 if delta == 1.0 else 0.01
        got = truth.at(delta)
        res.checks.append(Check(f"truth psi({delta:g}) vs {anchor}", abs(got - anchor) <= tol, got, f"within {tol}"))
    res.checks.append(Check("treated share", abs(share - PROBATION_TREATED_SHARE) <= 0.005, share, "within 0.005"))

    results, hits, rejects = [], {d: 0 for d in PROBATION_ANCHORS}, 0
    with tempfile.TemporaryDirectory(prefix="ipscurve_probation_") as tmp:
        for r in range(reps):
            s_sample, s_est, _ = replicate_seeds(seed, r)
            run_dir = Path(tmp) / f"run_{r:03d}"
            run_dir.mkdir()
            save_frame(sample_dgp(dgp, n, s_sample), run_dir / "data.csv")
            cfg = RunConfig.from_dict(probation_run_config(s_est))
            run_estimate(cfg, run_dir / "data.csv", run_dir / "out", n_jobs=n_jobs)
            curve = json.loads((run_dir / "out" / "curve.json").read_text())
            contrast = json.loads((run_dir / "out" / "contrast.json").read_text())
            rows = curve["rows"]
            d = np.array([row["delta"] for row in rows])
            est = np.array([row["estimate"] for row in rows])
            plo = np.array([row["pointwise_lo"] for row in rows])
            phi = np.array([row["pointwise_hi"] for row in rows])
            blo = np.array([row["band_lo"] for row in rows])
            bhi = np.array([row["band_hi"] for row in rows])
            for delta, anchor in PROBATION_ANCHORS.items():
                j = int(np.argmin(np.abs(d - delta)))
                hits[delta] += bool(blo[j] <= anchor <= bhi[j])
            rejects += contrast["overlap_test"]["decision"] == "reject"
            cover = (plo <= truth.psi) & (truth.psi <= phi)
            ucover = bool(np.all((blo <= truth.psi) & (truth.psi <= bhi)))
            se = np.array([row["std_error"] for row in rows])
            results.append((est, se, cover, ucover, curve["critical_value"]))
    rep = aggregate_replicates("probation_like_end_to_end", grid.values, truth.psi, results, n,
                               RunConfig.from_dict(probation_run_config(seed)).digest(), seed)
    res.reports[rep.label] = rep
    for delta, count in hits.items():
        frac = count / reps
        res.checks.append(Check(f"anchor {PROBATION_ANCHORS[delta]} inside band at delta={delta:g}",
                                frac >= PROBATION_MIN_BAND_HIT, frac, f">= {PROBATION_MIN_BAND_HIT}"))
    frac = rejects / reps
    res.checks.append(Check("overlap test rejects (0.1 vs 10)", frac > PROBATION_MIN_REJECT, frac,
                            f"> {PROBATION_MIN_REJECT}"))
    res.extra["anchor_band_hits"] = {f"{d:g}": c for d, c in hits.items()}
    res.extra["overlap_rejections"] = rejects
    return res


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "oracle_consistency": _oracle_consistency,
    "coverage": _coverage,
    "double_robustness": _double_robustness,
    "literal_formula_bias": _literal_formula_bias,
    "probation_like": _probation_like,
}


def run_suite(name: str, reps: int | None = None, n: int | None = None, seed: int | None = None,
              n_jobs: int = 1) -> SuiteResult:
    """Run a named suite; ``reps``, ``n`` and ``seed`` override its defaults."""
    if name not in SUITES:
        raise KeyError(name)
    d = SUITE_DEFAULTS[name]
    reps = d["reps"] if reps is None else int(reps)
    n = d["n"] if n is None else int(n)
    seed = d["seed"] if seed is None else int(seed)
    if reps < 2 or n < 1 or not math.isfinite(n):
        raise ValueError("reps must be >= 2 and n >= 1")
    return SUITES[name](reps, n, seed, n_jobs)


__all__ = ["Check", "SUITES", "SUITE_DEFAULTS", "SuiteResult", "probation_run_config", "run_suite"]
