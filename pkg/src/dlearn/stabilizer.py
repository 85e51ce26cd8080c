"""Stabilized D-Learning: one inverse-variance reweighting pass on top of D/RD/AD.

1. fit the base learner (weights ``1/pi``);
2. square its working residuals;
3. tune each residual-variance family and pick one by internal CV;
4. predict the residual variance of every row;
5. refit the working regression with inverse-variance weights.

Two details keep the refit consistent. The working error of ``2RA`` (or
``K/(K-1) R``) has a conditional mean that depends on the arm whenever the
main effect is nonzero, so a weight that varies with the arm at fixed ``x``
biases the refit. The variance model is therefore fitted on ``(A, X)`` but
its predictions are averaged over the arms, giving ``s(x)``, and row ``i``
gets weight ``1 / (pi_i s(x_i))``; under a constant propensity this is
``1 / s(x_i)`` up to scale. Second, each training row's ``s`` comes from the
internal-CV fold model that did not see that row, so a row's weight is not
driven by its own residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import encoding
from .dataset import BINARY, Dataset
from .errors import InvalidInput, InvalidMode, SingularDesign
from .learners import STABILIZED, ITRModel, fit_base, fit_working, pseudo_outcome, working_design
from .linmod import LASSO_CV, Regularization, sandwich_covariance
from .residvar import FAMILIES, VarianceModel, build_variance_features, select_family_cv


@dataclass(frozen=True)
class ResidVarConfig:
    """Residual-variance settings for ``stabilize``.

    ``cross_fit`` and ``marginalize_arms`` can be switched off to get the
    plain in-sample, arm-specific weights ``1/sigma2_hat(a_i, x_i)``.
    """

    candidates: Sequence[str] = FAMILIES
    folds: int = 5
    floor: float | None = None
    hyperparams: dict = field(default_factory=dict)
    cross_fit: bool = True
    marginalize_arms: bool = True


def squared_residuals(data: Dataset, model: ITRModel) -> np.ndarray:
    """Squared working-model residuals of ``model`` on ``data``."""
    if model.multi == (data.mode == BINARY):
        raise InvalidMode(f"{model.kind} model does not match {data.mode} data")
    Xw, _ = working_design(data)
    if Xw.shape[1] != model.fit.coefficients.shape[0]:
        raise InvalidInput("model dimension does not match data")
    r = pseudo_outcome(data, model.main_effect) - Xw @ model.fit.coefficients
    return r * r


def arm_features(data: Dataset, arm) -> np.ndarray:
    """Variance features of every row with the arm set to ``arm``."""
    if data.mode == BINARY:
        return np.column_stack([data.X, np.full(data.n, float(arm))])
    u = encoding.simplex_vertices(data.K)[arm]
    return np.column_stack([data.X, np.tile(u, (data.n, 1))])


def arms_of(data: Dataset):
    return (-1, 1) if data.mode == BINARY else tuple(range(1, data.K + 1))


def marginal_variance(predict: Callable, data: Dataset) -> np.ndarray:
    """``s(x_i)``: mean over arms of ``predict`` evaluated at ``(a, x_i)``."""
    return np.mean([predict(arm_features(data, a)) for a in arms_of(data)], axis=0)


def _refit(data, base, sigma2, variance_model, reg, seed, pi_factor=True):
    Xw, _ = working_design(data)
    try:
        cov = sandwich_covariance(Xw, sigma2)
    except SingularDesign:
        cov = None
    w = 1.0 / (data.pi * sigma2) if pi_factor else 1.0 / sigma2
    return fit_working(data, STABILIZED[base.kind], w, reg, seed,
                       main_effect=base.main_effect, variance_model=variance_model,
                       covariance=cov)


def _check_base(base: ITRModel, base_kind: str):
    if base.kind != base_kind:
        raise InvalidInput(f"base model is {base.kind}, expected {base_kind}")


def row_variances(data: Dataset, base: ITRModel, residvar: ResidVarConfig = ResidVarConfig(),
                  seed=0, variance_model: VarianceModel | None = None):
    """Steps 2-4: the variance model and the per-row variance used for weighting."""
    F = build_variance_features(data)
    selection = None
    if variance_model is None:
        e2 = squared_residuals(data, base)
        selection = select_family_cv(F, e2, residvar.candidates, residvar.folds, seed,
                                     residvar.floor, residvar.hyperparams)
        variance_model = selection.model
    predict = selection.cross_fit_predict if selection is not None and residvar.cross_fit \
        else variance_model.predict
    if residvar.marginalize_arms:
        return variance_model, marginal_variance(predict, data)
    return variance_model, predict(F)


def stabilize(data: Dataset, base_kind: str = "D", residvar: ResidVarConfig = ResidVarConfig(),
              reg: Regularization = LASSO_CV, seed=0, base_model: ITRModel | None = None,
              variance_model: VarianceModel | None = None, **base_kwargs) -> ITRModel:
    """Run the five-step stabilization and return the SD/SRD/SAD model.

    ``base_model`` reuses an already fitted base learner; ``variance_model``
    skips family selection and uses the given model for the weights. The
    attached covariance is ``sandwich_covariance`` of the working design at
    the per-row variances used for weighting.
    """
    base = base_model if base_model is not None else fit_base(data, base_kind, reg, seed, **base_kwargs)
    _check_base(base, base_kind)
    vm, sigma2 = row_variances(data, base, residvar, seed, variance_model)
    return _refit(data, base, sigma2, vm, reg, seed, pi_factor=residvar.marginalize_arms)


class OracleVariance:
    """Known variance function ``sigma2(A, X)`` exposed through the feature layout."""

    def __init__(self, fn: Callable, p: int, K: int, mode: str):
        self.fn = fn
        self.p = p
        self.K = K
        self.mode = mode

    def predict(self, F):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        X = F[:, : self.p]
        if self.mode == BINARY:
            A = F[:, self.p].astype(int)
        else:
            A = encoding.argmax_arm(F[:, self.p:] @ encoding.simplex_vertices(self.K).vertices.T)
        return np.asarray(self.fn(A, X), dtype=float)


def oracle_stabilize(data: Dataset, base_kind: str, true_sigma2: Callable,
                     reg: Regularization = LASSO_CV, seed=0,
                     base_model: ITRModel | None = None, marginalize_arms=True,
                     **base_kwargs) -> ITRModel:
    """Stabilize with a supplied variance function ``true_sigma2(A, X)`` instead of a fitted one."""
    base = base_model if base_model is not None else fit_base(data, base_kind, reg, seed, **base_kwargs)
    _check_base(base, base_kind)
    arms = arms_of(data) if marginalize_arms else (None,)
    vals = []
    for a in arms:
        A = data.A if a is None else np.full(data.n, a)
        v = np.asarray(true_sigma2(A, data.X), dtype=float)
        v = np.broadcast_to(v, (data.n,)) if v.ndim == 0 else v.ravel()
        if v.shape[0] != data.n or not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise InvalidInput("oracle variance must be finite and positive for every row")
        vals.append(v)
    sigma2 = np.mean(vals, axis=0)
    vm = VarianceModel("oracle", OracleVariance(true_sigma2, data.p, data.K, data.mode),
                       float(sigma2.min()), {}, build_variance_features(data).shape[1])
    return _refit(data, base, sigma2, vm, reg, seed, pi_factor=marginalize_arms)
