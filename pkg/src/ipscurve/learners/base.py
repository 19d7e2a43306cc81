from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

EPS = 1e-6

LearnerKind = Literal["constant", "ridge_logistic", "gbt"]

_DEFAULTS = {
    "constant": {},
    "ridge_logistic": {"penalty": 1.0},
    "gbt": {"tree_count": 50, "max_depth": 2, "learning_rate": 0.1, "min_leaf": 10},
}


class LearnerError(ValueError):
    pass


def clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def expit(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def log_loss(y, p) -> float:
    p = clamp(p)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


@dataclass(frozen=True)
class LearnerSpec:
    """A base learner and its hyperparameters.

    ``ridge_logistic`` takes ``penalty`` (>= 0). ``gbt`` takes ``tree_count``,
    ``max_depth`` (1..8), ``learning_rate`` (0, 1] and ``min_leaf`` (>= 1).
    Missing hyperparameters fall back to package defaults.
    """

    kind: LearnerKind
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        unknown = set(self.hyperparameters) - set(_DEFAULTS[self.kind])
        if unknown:
            raise LearnerError(f"unknown hyperparameter(s) for {self.kind}: {sorted(unknown)}")
        hp = {**_DEFAULTS[self.kind], **self.hyperparameters}
        if self.kind == "ridge_logistic":
            if not (np.isfinite(hp["penalty"]) and hp["penalty"] >= 0):
                raise LearnerError("ridge penalty must be finite and >= 0")
        elif self.kind == "gbt":
            if int(hp["tree_count"]) != hp["tree_count"] or hp["tree_count"] < 1:
                raise LearnerError("tree_count must be an integer >= 1")
            if int(hp["max_depth"]) != hp["max_depth"] or not 1 <= hp["max_depth"] <= 8:
                raise LearnerError("max_depth must be an integer in [1, 8]")
            if not 0 < hp["learning_rate"] <= 1:
                raise LearnerError("learning_rate must lie in (0, 1]")
            if int(hp["min_leaf"]) != hp["min_leaf"] or hp["min_leaf"] < 1:
                raise LearnerError("min_leaf must be an integer >= 1")
            hp = {**hp, "tree_count": int(hp["tree_count"]), "max_depth": int(hp["max_depth"]),
                  "min_leaf": int(hp["min_leaf"])}
        object.__setattr__(self, "hyperparameters", hp)

    @property
    def name(self) -> str:
        if self.kind == "constant":
            return "constant"
        args = ",".join(f"{k}={v}" for k, v in sorted(self.hyperparameters.items()))
        return f"{self.kind}({args})"

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.hyperparameters}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise LearnerError("learner entry lacks 'kind'") from None
        return cls(kind, d)


class FittedModel:
    """Common surface of fitted probability models."""

    feature_count: int
    iterations: int = 0
    converged: bool = True

    def _predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if self.feature_count == 1 else x.reshape(1, -1)
        if x.shape[1] != self.feature_count:
            raise LearnerError(f"expected {self.feature_count} columns, got {x.shape[1]}")
        return clamp(self._predict(x))


class ConstantModel(FittedModel):
    def __init__(self, value: float, feature_count: int):
        self.value = float(value)
        self.feature_count = feature_count

    def _predict(self, x):
        return np.full(x.shape[0], self.value)


def _check_xy(x, y, min_rows: int = 1):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise LearnerError("x and y row counts differ")
    if x.shape[0] < min_rows:
        raise LearnerError(f"need at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise LearnerError("design matrix contains non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise LearnerError("response must be binary")
    return x, y


def fit_constant(x, y) -> ConstantModel:
    x, y = _check_xy(x, y)
    return ConstantModel(float(clamp(y.mean())), x.shape[1])
