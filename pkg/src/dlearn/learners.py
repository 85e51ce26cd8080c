"""D-, RD- and AD-Learning: direct regression of the treatment-covariate interaction.

Binary D-Learning regresses the pseudo-outcome ``2 R A`` on ``X`` with
weights ``1/pi``; the sign of the fitted score is the rule. RD-Learning does
the same after subtracting a fitted main effect from ``R``. AD-Learning codes
the arms as simplex vertices and regresses ``K/(K-1) R`` on the encoded rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import encoding
from .dataset import BINARY, MULTI, Dataset
from .errors import InvalidInput, InvalidMode
from .linmod import LASSO_CV, FitResult, Regularization, SandwichCovariance, fit_penalized

BASE_KINDS = ("D", "RD", "AD")
STABILIZED = {"D": "SD", "RD": "SRD", "AD": "SAD"}
KINDS = BASE_KINDS + tuple(STABILIZED.values())


@dataclass(frozen=True)
class ITRModel:
    """A fitted linear decision rule.

    Binary kinds hold ``beta`` (length ``p``); multi-arm kinds hold ``B``
    (shape ``(p, K-1)``). ``fit`` is the underlying linear fit on the
    (encoded) design, kept for residual computation.
    """

    kind: str
    K: int
    fit: FitResult
    beta: np.ndarray | None = None
    B: np.ndarray | None = None
    main_effect: FitResult | None = None
    variance_model: Any = None
    covariance: SandwichCovariance | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown model kind {self.kind!r}")
        if (self.beta is None) == (self.B is None):
            raise InvalidInput("exactly one of beta / B must be set")
        if (self.kind in ("RD", "SRD")) != (self.main_effect is not None):
            raise InvalidInput("main_effect is present exactly for RD and SRD models")
        if (self.kind in ("SD", "SRD", "SAD")) != (self.variance_model is not None):
            raise InvalidInput("variance_model is present exactly for stabilized models")

    @property
    def multi(self):
        return self.B is not None

    @property
    def p(self):
        return self.B.shape[0] if self.multi else self.beta.shape[0]

    @property
    def lam(self):
        return self.fit.lam

    def scores(self, X) -> np.ndarray:
        """``X beta`` as an ``(n, 1)`` array, or per-arm ``u_k' B' x`` as ``(n, K)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise InvalidInput(f"row has {X.shape[1]} covariates, model expects {self.p}")
        if self.multi:
            return encoding.rank_scores(X @ self.B, self.K)
        return (X @ self.beta)[:, None]

    def decision_function(self, X) -> np.ndarray:
        """Estimated ``f(x)``: ``x'beta`` (shape ``(n,)``) or ``B'x`` (shape ``(n, K-1)``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise InvalidInput(f"row has {X.shape[1]} covariates, model expects {self.p}")
        return X @ self.B if self.multi else X @ self.beta

    def predict(self, X) -> np.ndarray:
        S = self.scores(X)
        if self.multi:
            return encoding.argmax_arm(S)
        return np.where(S[:, 0] >= 0, 1, -1)


def decision_scores(model: ITRModel, x) -> np.ndarray:
    return model.scores(np.asarray(x, dtype=float).reshape(1, -1))[0]


def predict_rule(model: ITRModel, x) -> int:
    return int(model.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])


# ---------------------------------------------------------------- shared pieces


def working_design(data: Dataset):
    """Design and unpenalized columns of the working regression for ``data``."""
    if data.mode == BINARY:
        return data.X, (0,)
    return encoding.encode_design(data.X, data.A, data.K), tuple(range(data.K - 1))


def pseudo_outcome(data: Dataset, main_effect: FitResult | None = None) -> np.ndarray:
    """``2 (r - m(x)) a`` for binary data, ``K/(K-1) r`` for multi-arm data."""
    if data.mode == BINARY:
        r = data.R if main_effect is None else data.R - main_effect.predict(data.X)
        return 2.0 * r * data.A
    if main_effect is not None:
        raise InvalidMode("residualized outcomes are only defined for binary data")
    return data.K / (data.K - 1) * data.R


def fit_working(data: Dataset, kind: str, w, reg: Regularization, seed=0,
                main_effect: FitResult | None = None, **extra) -> ITRModel:
    """Weighted working regression for ``data`` packaged as an ``ITRModel``."""
    Xw, unpen = working_design(data)
    fit = fit_penalized(Xw, pseudo_outcome(data, main_effect), w, reg, seed, unpen)
    if data.mode == BINARY:
        return ITRModel(kind, 2, fit, beta=fit.coefficients, main_effect=main_effect, **extra)
    B = encoding.devectorize(fit.coefficients, data.p, data.K)
    return ITRModel(kind, data.K, fit, B=B, **extra)


# ---------------------------------------------------------------- estimators


def fit_dlearning(data: Dataset, reg: Regularization = LASSO_CV, seed=0) -> ITRModel:
    """Binary D-Learning: regress ``2 R A`` on ``X`` with weights ``1/pi``."""
    if data.mode != BINARY:
        raise InvalidMode("D-Learning needs binary arms (-1/+1)")
    return fit_working(data, "D", 1.0 / data.pi, reg, seed)


def fit_main_effect(data: Dataset, reg: Regularization = LASSO_CV, seed=0) -> FitResult:
    """Inverse-propensity-weighted regression of ``R`` on ``X``."""
    return fit_penalized(data.X, data.R, 1.0 / data.pi, reg, seed)


def fit_rdlearning(data: Dataset, main_reg: Regularization = LASSO_CV,
                   interaction_reg: Regularization = LASSO_CV, seed=0,
                   main_effect: FitResult | None = None) -> ITRModel:
    """RD-Learning: D-Learning on ``R - m(X)``.

    ``main_effect`` overrides the fitted main-effect model when given.
    """
    if data.mode != BINARY:
        raise InvalidMode("RD-Learning needs binary arms (-1/+1)")
    if main_effect is None:
        main_effect = fit_main_effect(data, main_reg, seed)
    return fit_working(data, "RD", 1.0 / data.pi, interaction_reg, seed, main_effect=main_effect)


def fit_adlearning(data: Dataset, reg: Regularization = LASSO_CV, seed=0) -> ITRModel:
    """AD-Learning: regress ``K/(K-1) R`` on ``kron(x, u_a)`` with weights ``1/pi``."""
    if data.mode != MULTI:
        raise InvalidMode("AD-Learning needs multi-arm labels 1..K")
    return fit_working(data, "AD", 1.0 / data.pi, reg, seed)


def fit_base(data: Dataset, kind: str, reg: Regularization = LASSO_CV, seed=0, **kwargs) -> ITRModel:
    if kind == "D":
        return fit_dlearning(data, reg, seed)
    if kind == "RD":
        return fit_rdlearning(data, kwargs.get("main_reg", reg), reg, seed, kwargs.get("main_effect"))
    if kind == "AD":
        return fit_adlearning(data, reg, seed)
    raise InvalidInput(f"unknown base kind {kind!r}")
