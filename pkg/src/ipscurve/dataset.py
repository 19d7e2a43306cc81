"""Ingestion, encoding, stratification and summaries of observational data.

An :class:`AnalysisFrame` is the analysis-ready view ``(X, A, Y)``: an encoded
covariate matrix, a binary exposure and a binary outcome, plus optional strata
labels used for subgroup runs.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd

MISSING_TOKENS = frozenset({"", "na", "nan", "null"})
MAX_LEVELS = 64
TRUE_TOKENS = frozenset({"1", "true"})
FALSE_TOKENS = frozenset({"0", "false"})


class DataError(ValueError):
    """Input data violates a validation rule (bad value, missing column, ...)."""


class SchemaError(ValueError):
    """A column schema is internally inconsistent."""


@dataclass(frozen=True)
class ColumnSchema:
    outcome_column: str
    treatment_column: str
    covariate_columns: tuple[str, ...]
    categorical_columns: tuple[str, ...] = ()
    strata_column: str | None = None
    missing_policy: Literal["fail", "drop_row"] = "fail"

    def __post_init__(self):
        object.__setattr__(self, "covariate_columns", tuple(self.covariate_columns))
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        if self.outcome_column == self.treatment_column:
            raise SchemaError("outcome and treatment columns must differ")
        overlap = {self.outcome_column, self.treatment_column} & set(self.covariate_columns)
        if overlap:
            raise SchemaError(f"covariate list contains outcome/treatment column(s): {sorted(overlap)}")
        if len(set(self.covariate_columns)) != len(self.covariate_columns):
            raise SchemaError("duplicate covariate column names")
        extra = set(self.categorical_columns) - set(self.covariate_columns)
        if extra:
            raise SchemaError(f"categorical columns not among covariates: {sorted(extra)}")
        if self.missing_policy not in ("fail", "drop_row"):
            raise SchemaError(f"unknown missing_policy {self.missing_policy!r}")

    @property
    def required_columns(self) -> list[str]:
        cols = [self.outcome_column, self.treatment_column, *self.covariate_columns]
        if self.strata_column is not None and self.strata_column not in cols:
            cols.append(self.strata_column)
        return cols


@dataclass(frozen=True)
class EncodedColumn:
    """One column of the encoded matrix and the raw column it came from."""

    name: str
    source: str
    kind: Literal["numeric", "indicator"]
    level: str | None = None
    center: float = 0.0
    scale: float = 1.0


@dataclass(frozen=True)
class EncodingMap:
    columns: tuple[EncodedColumn, ...] = ()
    reference_levels: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_dict(self) -> dict:
        return {
            "columns": [vars(c) for c in self.columns],
            "reference_levels": dict(self.reference_levels),
            "levels": {k: list(v) for k, v in self.levels.items()},
        }


@dataclass(frozen=True, eq=False)
class AnalysisFrame:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    strata: np.ndarray | None = None
    unit_ids: np.ndarray | None = None
    encoding_map: EncodingMap = field(default_factory=EncodingMap)
    outcome_label: str = "outcome"
    stratum_label: str | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DataError("x must be a 2-D matrix")
        n = x.shape[0]
        if n < 1:
            raise DataError("frame has no rows")
        a = _as_binary(self.a, "treatment")
        y = _as_binary(self.y, "outcome")
        if a.shape[0] != n or y.shape[0] != n:
            raise DataError(f"row count mismatch: x has {n}, a has {a.shape[0]}, y has {y.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise DataError("x contains non-finite values")
        ids = np.arange(n) if self.unit_ids is None else np.asarray(self.unit_ids)
        if ids.shape[0] != n:
            raise DataError("unit_ids length mismatch")
        strata = None if self.strata is None else np.asarray(self.strata, dtype=object)
        if strata is not None and strata.shape[0] != n:
            raise DataError("strata length mismatch")
        for arr in (x, a, y, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "unit_ids", ids)
        object.__setattr__(self, "strata", strata)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "AnalysisFrame":
        rows = np.asarray(rows)
        return replace(
            self,
            x=self.x[rows],
            a=self.a[rows],
            y=self.y[rows],
            strata=None if self.strata is None else self.strata[rows],
            unit_ids=self.unit_ids[rows],
        )


def _as_binary(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise DataError(f"{what} must be a vector")
    if arr.dtype == bool:
        return arr.astype(np.int8)
    out = np.asarray(arr, dtype=float)
    bad = ~((out == 0) | (out == 1))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"non-binary {what} value {arr[i]!r} at row {i}")
    return out.astype(np.int8)


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _cell_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, str):
        return _is_missing(v)
    return isinstance(v, float) and math.isnan(v)


def _parse_binary(cell: str, column: str, row: int, what: str) -> int:
    token = cell.strip().lower()
    if token in TRUE_TOKENS:
        return 1
    if token in FALSE_TOKENS:
        return 0
    try:
        value = float(token)
    except ValueError:
        value = None
    if value == 1.0:
        return 1
    if value == 0.0:
        return 0
    raise DataError(f"non-binary {what} value {cell!r} in column {column!r} at data row {row}")


def read_raw_csv(path: str | Path, schema: ColumnSchema) -> pd.DataFrame:
    """Read the schema's columns as strings, applying the missing-data policy.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in schema.required_columns if c not in raw.columns]
    if missing:
        raise DataError(f"missing column {missing[0]!r} in {path.name}")
    raw = raw[schema.required_columns].copy()
    raw.index = pd.RangeIndex(1, len(raw) + 1)
    miss = raw.apply(lambda col: col.map(_is_missing))
    if miss.to_numpy().any():
        if schema.missing_policy == "fail":
            row, col = next(
                (r, c) for r in raw.index for c in raw.columns if miss.at[r, c]
            )
            raise DataError(f"missing value in column {col!r} at data row {row}")
        raw = raw.loc[~miss.any(axis=1)]
    if len(raw) == 0:
        raise DataError("no rows left after applying the missing-data policy")
    return raw


def load_csv(path: str | Path, schema: ColumnSchema) -> AnalysisFrame:
    """Load a CSV file into an encoded :class:`AnalysisFrame`."""
    raw = read_raw_csv(path, schema)
    return encode_covariates(raw, schema)


def encode_covariates(raw: pd.DataFrame, schema: ColumnSchema) -> AnalysisFrame:
    """One-hot encode categorical covariates and standardize numeric ones.

    Categorical columns drop their lexicographically first level as the
    reference. Numeric columns are centered and divided by the sample (n-1)
    standard deviation; zero-variance columns become all zeros.
    """
    missing = [c for c in schema.required_columns if c not in raw.columns]
    if missing:
        raise DataError(f"missing column {missing[0]!r}")
    n = len(raw)
    if n == 0:
        raise DataError("empty table")
    row_labels = list(raw.index)

    def binary(column: str, what: str) -> np.ndarray:
        values = raw[column].tolist()
        return np.array(
            [_coerce_binary(v, column, row_labels[i], what) for i, v in enumerate(values)], dtype=np.int8
        )

    y = binary(schema.outcome_column, "outcome")
    a = binary(schema.treatment_column, "treatment")

    blocks: list[np.ndarray] = []
    encoded: list[EncodedColumn] = []
    references: dict[str, str] = {}
    levels_of: dict[str, list[str]] = {}
    for col in schema.covariate_columns:
        series = raw[col]
        present = ~series.map(_cell_missing).astype(bool)
        if not present.any():
            raise DataError(f"column {col!r} is entirely missing")
        if not present.all():
            i = int(np.flatnonzero(~present.to_numpy())[0])
            raise DataError(f"missing value in column {col!r} at data row {row_labels[i]}")
        if col in schema.categorical_columns:
            values = series.map(lambda v: str(v).strip()).to_numpy()
            levels = sorted(set(values))
            if len(levels) > MAX_LEVELS:
                raise DataError(f"categorical column {col!r} has {len(levels)} levels (max {MAX_LEVELS})")
            references[col] = levels[0]
            levels_of[col] = levels
            for level in levels[1:]:
                blocks.append((values == level).astype(float))
                encoded.append(EncodedColumn(f"{col}={level}", col, "indicator", level=level))
        else:
            numeric = _to_numeric(series, col, row_labels)
            center = float(numeric.mean())
            scale = float(numeric.std(ddof=1)) if n > 1 else 0.0
            if not np.isfinite(scale) or scale == 0.0:
                blocks.append(np.zeros(n))
                encoded.append(EncodedColumn(col, col, "numeric", center=center, scale=0.0))
            else:
                blocks.append((numeric - center) / scale)
                encoded.append(EncodedColumn(col, col, "numeric", center=center, scale=scale))
    x = np.column_stack(blocks) if blocks else np.zeros((n, 0))
    strata = None
    if schema.strata_column is not None:
        strata = np.array([str(v).strip() for v in raw[schema.strata_column].tolist()], dtype=object)
    return AnalysisFrame(
        x=x,
        a=a,
        y=y,
        strata=strata,
        unit_ids=np.asarray(row_labels),
        encoding_map=EncodingMap(tuple(encoded), references, levels_of),
        outcome_label=schema.outcome_column,
    )


def _coerce_binary(value, column: str, row, what: str) -> int:
    if isinstance(value, str):
        return _parse_binary(value, column, row, what)
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if value in (0, 1):
        return int(value)
    raise DataError(f"non-binary {what} value {value!r} in column {column!r} at data row {row}")


def _to_numeric(series: pd.Series, column: str, row_labels: Sequence) -> np.ndarray:
    out = np.empty(len(series))
    for i, v in enumerate(series.tolist()):
        try:
            out[i] = float(v)
        except (TypeError, ValueError):
            raise DataError(f"unparseable numeric cell {v!r} in column {column!r} at data row {row_labels[i]}") from None
        if not math.isfinite(out[i]):
            raise DataError(f"non-finite numeric cell {v!r} in column {column!r} at data row {row_labels[i]}")
    return out


def stratify(frame: AnalysisFrame, min_rows: int = 50) -> list[tuple[str, AnalysisFrame]]:
    """Partition a frame by its strata labels, in sorted label order.

    Sub-frames keep the parent's encoding; nothing is re-standardized.
    """
    if frame.strata is None:
        raise DataError("frame has no strata labels")
    labels = frame.strata
    if any(lab is None or (isinstance(lab, str) and _is_missing(lab)) for lab in labels):
        raise DataError("strata label missing for at least one row")
    out = []
    for label in sorted(set(labels.tolist()), key=str):
        rows = np.flatnonzero(labels == label)
        if rows.size < min_rows:
            raise DataError(f"stratum {label!r} has {rows.size} rows, fewer than the minimum {min_rows}")
        sub = frame.subset(rows)
        out.append((str(label), replace(sub, stratum_label=str(label))))
    return out


def redefine_outcome(frame: AnalysisFrame, new_outcome, label: str) -> AnalysisFrame:
    new_outcome = np.asarray(new_outcome)
    if new_outcome.shape != (frame.n,):
        raise DataError(f"outcome length {new_outcome.shape[0] if new_outcome.ndim else 0} does not match n={frame.n}")
    return replace(frame, y=_as_binary(new_outcome, "outcome"), outcome_label=label)


def one_vs_rest(categories, levels: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Expand a multi-category column into one binary indicator per level."""
    values = np.array([str(v) for v in categories], dtype=object)
    levels = sorted(set(values.tolist())) if levels is None else list(levels)
    return {lev: (values == lev).astype(np.int8) for lev in levels}


# --- persistence of encoded frames -------------------------------------------------


def save_frame(frame: AnalysisFrame, path: str | Path) -> None:
    """Write an encoded frame to CSV with 17 significant digits (lossless for doubles)."""
    names = frame.encoding_map.names or [f"x{j}" for j in range(frame.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["unit_id", "y", "a"] + (["strata"] if frame.strata is not None else []) + names
        w.writerow(header)
        for i in range(frame.n):
            row = [frame.unit_ids[i], int(frame.y[i]), int(frame.a[i])]
            if frame.strata is not None:
                row.append(frame.strata[i])
            row.extend(format(float(v), ".17g") for v in frame.x[i])
            w.writerow(row)


def load_frame(path: str | Path) -> AnalysisFrame:
    """Inverse of :func:`save_frame`; no re-encoding is applied."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    fixed = ["unit_id", "y", "a"] + (["strata"] if "strata" in df.columns else [])
    xcols = [c for c in df.columns if c not in fixed]
    x = np.array([[float(v) for v in df[c]] for c in xcols]).T if xcols else np.zeros((len(df), 0))
    return AnalysisFrame(
        x=x.reshape(len(df), len(xcols)),
        a=df["a"].astype(int).to_numpy(),
        y=df["y"].astype(int).to_numpy(),
        strata=df["strata"].to_numpy(dtype=object) if "strata" in df.columns else None,
        unit_ids=df["unit_id"].to_numpy(dtype=object),
        encoding_map=EncodingMap(tuple(EncodedColumn(c, c, "numeric") for c in xcols)),
    )


# --- summary table -----------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    variable: str
    level: str | None
    kind: Literal["count", "mean"]
    values: tuple[tuple[float, float], ...]  # (count, pct) or (mean, sd), one per group


@dataclass(frozen=True)
class SummaryTable:
    group_by: str
    groups: tuple[str, ...]
    group_n: tuple[int, ...]
    rows: tuple[SummaryRow, ...]

    @property
    def total_n(self) -> int:
        return int(sum(self.group_n))

    def to_dataframe(self) -> pd.DataFrame:
        records = [
            {"variable": "n", "level": "", "statistic": "count", **{g: str(k) for g, k in zip(self.groups, self.group_n)}}
        ]
        for r in self.rows:
            rec = {"variable": r.variable, "level": r.level or "", "statistic": "count (%)" if r.kind == "count" else "mean (sd)"}
            for g, (u, v) in zip(self.groups, r.values):
                rec[g] = f"{int(u)} ({v:.2f})" if r.kind == "count" else f"{u:.4f} ({v:.4f})"
            records.append(rec)
        return pd.DataFrame.from_records(records, columns=["variable", "level", "statistic", *self.groups])

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "group_by": self.group_by,
            "groups": list(self.groups),
            "group_n": list(self.group_n),
            "total_n": self.total_n,
            "rows": [
                {
                    "variable": r.variable,
                    "level": r.level,
                    "kind": r.kind,
                    "values": {
                        g: ({"count": int(u), "percent": v} if r.kind == "count" else {"mean": u, "sd": v})
                        for g, (u, v) in zip(self.groups, r.values)
                    },
                }
                for r in self.rows
            ],
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=False)


def _count_row(name: str, level: str | None, indicator: np.ndarray, groups: list[np.ndarray]) -> SummaryRow:
    vals = []
    for g in groups:
        k = float(indicator[g].sum())
        vals.append((k, 100.0 * k / g.size if g.size else 0.0))
    return SummaryRow(name, level, "count", tuple(vals))


def _mean_row(name: str, values: np.ndarray, groups: list[np.ndarray]) -> SummaryRow:
    vals = []
    for g in groups:
        v = values[g]
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        vals.append((float(v.mean()), sd))
    return SummaryRow(name, None, "mean", tuple(vals))


def summarize(frame: AnalysisFrame, group_by: Literal["treatment", "strata"] = "treatment") -> SummaryTable:
    """Table-1 style summary: count (%) for binary/categorical, mean (sd) for numeric.

    Raw-scale values are recovered from the encoding map, so numeric covariates
    are reported in their original units.
    """
    if group_by == "treatment":
        labels = ["untreated", "treated"]
        groups = [np.flatnonzero(frame.a == 0), np.flatnonzero(frame.a == 1)]
        keep = [i for i, g in enumerate(groups) if g.size]
        labels, groups = [labels[i] for i in keep], [groups[i] for i in keep]
    elif group_by == "strata":
        if frame.strata is None:
            raise DataError("frame has no strata labels")
        labels = sorted(set(frame.strata.tolist()), key=str)
        groups = [np.flatnonzero(frame.strata == lab) for lab in labels]
        labels = [str(lab) for lab in labels]
    else:
        raise ValueError(f"unknown group_by {group_by!r}")

    rows = [
        _count_row(frame.outcome_label, "1", frame.y.astype(float), groups),
        _count_row("treatment", "1", frame.a.astype(float), groups),
    ]
    emap = frame.encoding_map
    if emap.columns:
        by_source: dict[str, list[int]] = {}
        for j, col in enumerate(emap.columns):
            by_source.setdefault(col.source, []).append(j)
        for source, idx in by_source.items():
            first = emap.columns[idx[0]]
            if first.kind == "numeric":
                raw = frame.x[:, idx[0]] * (first.scale if first.scale > 0 else 1.0) + first.center
                rows.append(_mean_row(source, raw, groups))
            else:
                block = frame.x[:, idx]
                ref = emap.reference_levels.get(source)
                rows.append(_count_row(source, ref, 1.0 - block.sum(axis=1), groups))
                for j in idx:
                    rows.append(_count_row(source, emap.columns[j].level, frame.x[:, j], groups))
    else:
        for j in range(frame.p):
            rows.append(_mean_row(f"x{j}", frame.x[:, j], groups))
    return SummaryTable(group_by, tuple(labels), tuple(int(g.size) for g in groups), tuple(rows))
