"""Evaluation criteria for a fitted rule and aggregation over replications."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import InvalidInput, InvalidMode, UndefinedValue

METRICS = ("ape", "misclassification", "value")


@dataclass(frozen=True)
class EvalResult:
    ape: float
    misclassification: float
    value: float
    n_test: int

    def __post_init__(self):
        for name in METRICS:
            if np.isnan(getattr(self, name)):
                raise InvalidInput(f"{name} is NaN")
        if self.ape < 0 or not 0 <= self.misclassification <= 1:
            raise InvalidInput("ape must be >= 0 and misclassification in [0, 1]")

    def as_dict(self):
        return asdict(self)


def ape(model, f_opt, X) -> float:
    """Mean squared distance between true and fitted decision functions.

    ``f_opt`` is ``2 delta(x)`` per row for binary problems and
    ``sum_k delta_k(x) u_k`` (shape ``(n, K-1)``) for multi-arm problems.
    """
    f_hat = model.decision_function(X)
    f_opt = np.asarray(f_opt, dtype=float)
    if f_opt.ndim == 2 and f_hat.ndim == 1 and f_opt.shape[1] == 1:
        f_opt = f_opt[:, 0]
    if f_hat.shape != f_opt.shape:
        raise InvalidMode(f"truth scores have shape {f_opt.shape}, model gives {f_hat.shape}")
    d = (f_hat - f_opt).reshape(len(f_hat), -1)
    return float(np.mean(np.sum(d * d, axis=1)))


def misclassification(model, d_opt, X) -> float:
    """Fraction of rows where the fitted rule disagrees with the optimal one."""
    d_opt = np.asarray(d_opt).ravel()
    pred = model.predict(X)
    if pred.shape != d_opt.shape:
        raise InvalidInput("truth labels and rows disagree in length")
    return float(np.mean(pred != d_opt))


def _labels(rule, X):
    if callable(getattr(rule, "predict", None)):
        return rule.predict(X)
    if callable(rule):
        return np.asarray(rule(X))
    return np.asarray(rule)


def empirical_value(rule, data: Dataset) -> float:
    """Inverse-propensity ratio estimate of the value of ``rule`` on ``data``.

    ``rule`` may be a fitted model, a function of ``X`` or an array of labels.

    Raises
    ------
    UndefinedValue
        If no row received the arm the rule recommends.
    """
    d = np.asarray(_labels(rule, data.X)).ravel()
    if d.shape[0] != data.n:
        raise InvalidInput("rule labels and rows disagree in length")
    w = (data.A == d) / data.pi
    denom = w.sum()
    if denom == 0:
        raise UndefinedValue("no test row received the recommended arm")
    return float(np.dot(w, data.R) / denom)


def evaluate(model, f_opt, d_opt, test: Dataset) -> EvalResult:
    return EvalResult(ape(model, f_opt, test.X), misclassification(model, d_opt, test.X),
                      empirical_value(model, test), test.n)


def mean_sem(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise InvalidInput("need at least two values for an SEM")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def aggregate(results: Sequence[EvalResult], metrics: Sequence[str] = METRICS) -> dict:
    """Mean and standard error of the mean for each metric.

    Returns ``{metric: (mean, sem)}``.
    """
    if len(results) < 2:
        raise InvalidInput("aggregation needs at least two results")
    return {m: mean_sem([getattr(r, m) for r in results]) for m in metrics}
