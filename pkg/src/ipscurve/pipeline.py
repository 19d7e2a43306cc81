"""File-based runs: JSON config in, curve/contrast/summary files out.

Every output embeds ``schema_version``, the config digest and the seed. For
a fixed config and data file, everything except the wall time recorded in
``run_manifest.json`` is byte-identical across runs and thread counts.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, _accel
from .dataset import ColumnSchema, DataError, SchemaError, load_csv, stratify, summarize
from .estimator import DeltaGrid, EstimationError, LearnerConfig, estimate_curve
from .inference import BootstrapConfig, EffectCurve, contrast_difference, contrast_overlap_test, uniform_band
from .learners import LearnerError, LearnerSpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CURVE_COLUMNS = ("delta", "estimate", "std_error", "pointwise_lo", "pointwise_hi", "band_lo", "band_hi")


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "schema",
    "grid",
    "k_folds",
    "learners",
    "bootstrap",
    "alpha",
    "seed",
    "stratify",
    "min_stratum_rows",
    "contrast",
}
_SCHEMA_KEYS = {
    "outcome_column",
    "treatment_column",
    "covariate_columns",
    "categorical_columns",
    "strata_column",
    "missing_policy",
}


@dataclass(frozen=True)
class RunConfig:
    schema: ColumnSchema
    seed: int
    grid: dict = field(default_factory=lambda: {"min": 0.1, "max": 10.0, "count": 100, "spacing": "log"})
    k_folds: int = 2
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    alpha: float = 0.05
    stratify: str | None = None
    min_stratum_rows: int = 50
    contrast: tuple[float, float] = (0.1, 10.0)
    contrast_use: str = "uniform"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("config field 'seed' is required")
        seed = d["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("config field 'seed' must be a nonnegative integer")
        sd = d.get("schema")
        if not isinstance(sd, dict):
            raise ConfigError("config field 'schema' is required")
        bad = set(sd) - _SCHEMA_KEYS
        if bad:
            raise ConfigError(f"unknown schema field(s): {sorted(bad)}")
        for key in ("outcome_column", "treatment_column", "covariate_columns"):
            if key not in sd:
                raise ConfigError(f"schema field {key!r} is required")
        stratify_col = d.get("stratify")
        strata_col = sd.get("strata_column")
        if stratify_col is not None and strata_col is not None and stratify_col != strata_col:
            raise ConfigError("'stratify' and schema 'strata_column' name different columns")
        try:
            schema = ColumnSchema(
                outcome_column=sd["outcome_column"],
                treatment_column=sd["treatment_column"],
                covariate_columns=tuple(sd["covariate_columns"]),
                categorical_columns=tuple(sd.get("categorical_columns", ())),
                strata_column=stratify_col or strata_col,
                missing_policy=sd.get("missing_policy", "fail"),
            )
        except SchemaError as exc:
            raise ConfigError(f"schema: {exc}") from None

        grid = {"min": 0.1, "max": 10.0, "count": 100, "spacing": "log", **d.get("grid", {})}
        if set(grid) - {"min", "max", "count", "spacing"}:
            raise ConfigError(f"unknown grid field(s): {sorted(set(grid) - {'min', 'max', 'count', 'spacing'})}")
        if not grid["min"] < grid["max"]:
            raise ConfigError("grid min must be below grid max")
        try:
            DeltaGrid.from_range(**grid)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None

        try:
            learners = _learner_config(d.get("learners"))
        except (LearnerError, ValueError, TypeError) as exc:
            raise ConfigError(f"learners: {exc}") from None

        alpha = d.get("alpha", 0.05)
        bd = dict(d.get("bootstrap", {}))
        if set(bd) - {"replicates", "multiplier", "seed"}:
            raise ConfigError(f"unknown bootstrap field(s): {sorted(set(bd) - {'replicates', 'multiplier', 'seed'})}")
        try:
            boot = BootstrapConfig(
                replicates=bd.get("replicates", 5000),
                multiplier=bd.get("multiplier", "rademacher"),
                alpha=alpha,
                seed=bd.get("seed", seed),
            )
        except ValueError as exc:
            raise ConfigError(f"bootstrap: {exc}") from None

        k = d.get("k_folds", 2)
        if not isinstance(k, int) or not 2 <= k <= 20:
            raise ConfigError("k_folds must be an integer in [2, 20]")
        cd = d.get("contrast", {})
        if isinstance(cd, (list, tuple)):
            cd = {"delta_lo": cd[0], "delta_hi": cd[1]}
        if set(cd) - {"delta_lo", "delta_hi", "use"}:
            raise ConfigError(f"unknown contrast field(s): {sorted(set(cd) - {'delta_lo', 'delta_hi', 'use'})}")
        use = cd.get("use", "uniform")
        if use not in ("uniform", "pointwise"):
            raise ConfigError("contrast 'use' must be 'uniform' or 'pointwise'")
        cfg = cls(
            schema=schema,
            seed=seed,
            grid=grid,
            k_folds=k,
            learners=learners,
            bootstrap=boot,
            alpha=alpha,
            stratify=stratify_col or strata_col,
            min_stratum_rows=d.get("min_stratum_rows", 50),
            contrast=(float(cd.get("delta_lo", 0.1)), float(cd.get("delta_hi", 10.0))),
            contrast_use=use,
        )
        grid_obj = cfg.delta_grid()
        for delta in cfg.contrast:
            try:
                grid_obj.index_of(delta)
            except ValueError as exc:
                raise ConfigError(f"contrast: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def delta_grid(self) -> DeltaGrid:
        return DeltaGrid.from_range(**self.grid)

    def to_dict(self) -> dict:
        s = self.schema
        return {
            "schema": {
                "outcome_column": s.outcome_column,
                "treatment_column": s.treatment_column,
                "covariate_columns": list(s.covariate_columns),
                "categorical_columns": list(s.categorical_columns),
                "strata_column": s.strata_column,
                "missing_policy": s.missing_policy,
            },
            "seed": self.seed,
            "grid": dict(self.grid),
            "k_folds": self.k_folds,
            "learners": self.learners.to_dict(),
            "bootstrap": {
                "replicates": self.bootstrap.replicates,
                "multiplier": self.bootstrap.multiplier,
                "seed": self.bootstrap.seed,
            },
            "alpha": self.alpha,
            "stratify": self.stratify,
            "min_stratum_rows": self.min_stratum_rows,
            "contrast": {"delta_lo": self.contrast[0], "delta_hi": self.contrast[1], "use": self.contrast_use},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _learner_config(spec: Any) -> LearnerConfig:
    if spec is None:
        return LearnerConfig()
    if isinstance(spec, list):
        return LearnerConfig.uniform([LearnerSpec.from_dict(s) for s in spec])
    if isinstance(spec, dict):
        extra = set(spec) - {"propensity", "outcome", "outcome_mode", "inner_folds"}
        if extra:
            raise ValueError(f"unknown field(s) {sorted(extra)}")
        kw = {}
        for role in ("propensity", "outcome"):
            if role in spec:
                kw[role] = tuple(LearnerSpec.from_dict(s) for s in spec[role])
        if "outcome_mode" in spec:
            kw["outcome_mode"] = spec["outcome_mode"]
        if "inner_folds" in spec:
            kw["inner_folds"] = spec["inner_folds"]
        return LearnerConfig(**kw)
    raise ValueError("learners must be a list of learner entries or an object")


def check_columns(config: RunConfig, data_path: str | Path) -> None:
    """Fail with a config error if the data header lacks any configured column."""
    path = Path(data_path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path.name} has no header row")
    for col in config.schema.required_columns:
        if col not in header:
            raise ConfigError(f"configured column {col!r} not found in {path.name}")


# --- writers -----------------------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def curve_csv(curve: EffectCurve, digest: str, seed: int) -> str:
    lines = [f"# schema_version={SCHEMA_VERSION} config_digest={digest} seed={seed}", ",".join(CURVE_COLUMNS)]
    for rec in curve.to_records():
        lines.append(",".join(_fmt(rec[c]) for c in CURVE_COLUMNS))
    return "\n".join(lines) + "\n"


def curve_json(curve: EffectCurve, digest: str, seed: int) -> dict:
    boot = curve.metadata.get("bootstrap", {})
    return {
        "schema_version": SCHEMA_VERSION,
        "config_digest": digest,
        "seed": seed,
        "outcome_label": curve.metadata.get("outcome_label"),
        "stratum_label": curve.metadata.get("stratum_label"),
        "n": curve.n,
        "alpha": curve.alpha,
        "critical_value": curve.critical_value,
        "pointwise_z": boot.get("pointwise_z"),
        "bands_contain_pointwise": curve.bands_contain_pointwise,
        "columns": list(CURVE_COLUMNS),
        "rows": curve.to_records(),
    }


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


@dataclass
class EstimateRun:
    label: str | None
    curve: EffectCurve
    contrast: dict
    provenance: dict


def _estimate_one(frame, config: RunConfig, grid: DeltaGrid, n_jobs: int) -> EstimateRun:
    curve, infl = estimate_curve(frame, grid, config.learners, config.k_folds, config.seed, config.alpha, n_jobs)
    curve = uniform_band(infl, curve, config.bootstrap)
    lo, hi = config.contrast
    overlap = contrast_overlap_test(curve, lo, hi, use=config.contrast_use)
    diff = contrast_difference(infl, lo, hi, config.alpha)
    contrast = {"overlap_test": overlap.to_dict(), "difference_test": {**diff.to_dict(), "extension": True}}
    return EstimateRun(frame.stratum_label, curve, contrast, curve.metadata.get("nuisance_provenance", {}))


def _write_run(run: EstimateRun, out: Path, digest: str, seed: int) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "curve.csv").write_text(curve_csv(run.curve, digest, seed), encoding="utf-8")
    _dump(out / "curve.json", curve_json(run.curve, digest, seed))
    _dump(
        out / "contrast.json",
        {
            "schema_version": SCHEMA_VERSION,
            "config_digest": digest,
            "seed": seed,
            "stratum_label": run.label,
            **run.contrast,
        },
    )
    return [str(out / f) for f in ("curve.csv", "curve.json", "contrast.json")]


def run_estimate(config: RunConfig, data_path: str | Path, out_dir: str | Path, n_jobs: int = 1) -> dict:
    """Estimate the pooled curve (and one per stratum when configured) and write outputs.

    Returns the manifest dictionary.
    """
    t0 = time.perf_counter()
    check_columns(config, data_path)
    frame = load_csv(data_path, config.schema)
    grid = config.delta_grid()
    digest = config.digest()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    runs = [("pooled", _estimate_one(frame, config, grid, n_jobs), out)]
    if config.stratify:
        for label, sub in stratify(frame, config.min_stratum_rows):
            runs.append((label, _estimate_one(sub, config, grid, n_jobs), out / "strata" / _safe(label)))
    files = []
    for _, run, target in runs:
        files += _write_run(run, target, digest, config.seed)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": digest,
        "seed": config.seed,
        "package_version": __version__,
        "config": config.to_dict(),
        "data_file": Path(data_path).name,
        "n": frame.n,
        "encoding": frame.encoding_map.to_dict(),
        "backend": _accel.backend_name(),
        "threads": _accel.get_threads(),
        "runs": [
            {
                "label": label,
                "n": run.curve.n,
                "critical_value": run.curve.critical_value,
                "bands_contain_pointwise": run.curve.bands_contain_pointwise,
                "learner_provenance": run.provenance,
            }
            for label, run, _ in runs
        ],
        "files": [str(Path(f).relative_to(out)) for f in files],
        "wall_time_seconds": round(time.perf_counter() - t0, 3),
    }
    _dump(out / "run_manifest.json", manifest)
    return manifest


def _safe(label: str) -> str:
    keep = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(label))
    return keep or "_"


def run_summarize(config: RunConfig, data_path: str | Path, out_dir: str | Path) -> dict:
    check_columns(config, data_path)
    frame = load_csv(data_path, config.schema)
    digest = config.digest()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    groupings = ["treatment"] + (["strata"] if config.schema.strata_column else [])
    for group_by in groupings:
        table = summarize(frame, group_by)
        df = table.to_dataframe()
        path_csv = out / f"summary_{group_by}.csv"
        with open(path_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# schema_version={SCHEMA_VERSION} config_digest={digest} seed={config.seed}\n")
            df.to_csv(fh, index=False, lineterminator="\n")
        _dump(out / f"summary_{group_by}.json", {**table.to_dict(), "config_digest": digest, "seed": config.seed})
        written[group_by] = table
    return written


__all__ = [
    "CURVE_COLUMNS",
    "ConfigError",
    "DataError",
    "EstimationError",
    "RunConfig",
    "check_columns",
    "curve_csv",
    "curve_json",
    "run_estimate",
    "run_summarize",
]
