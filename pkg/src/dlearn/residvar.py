"""Models of the conditional residual variance used for stabilization.

Three families predict squared residuals from ``(A, X)``: an L1-penalized
linear model on the features and their squares, a random forest, and
gradient-boosted trees. Each family is tuned on the full sample, then the
families are compared by K-fold CV on squared-residual MSE. Predictions are
floored at a positive constant so inverse-variance weights stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import encoding
from .dataset import BINARY, Dataset
from .errors import InvalidConfig, InvalidInput
from .linmod import _fold_ids, lambda_grid, lasso_path, select_lambda_cv
from .trees import fit_boosting, fit_forest

LINEAR = "linear-L1"
FOREST = "random-forest"
BOOSTING = "gradient-boosting"
FAMILIES = (LINEAR, FOREST, BOOSTING)

FLOOR_FRACTION = 0.2
FOREST_GRID = {"n_trees": (100, 300), "min_leaf": (5, 20)}
BOOSTING_DEFAULTS = {"n_rounds": 200, "max_depth": 3, "learning_rate": 0.1,
                     "subsample": 0.8, "min_leaf": 5, "holdout": 0.2}


def default_floor(sq_resid) -> float:
    """``FLOOR_FRACTION`` of the mean squared residual, and at least ``1e-6``."""
    return max(FLOOR_FRACTION * float(np.mean(sq_resid)), 1e-6)


def build_variance_features(data: Dataset) -> np.ndarray:
    """``[X | A]`` for binary data, ``[X | u_A']`` for multi-arm data."""
    if data.mode == BINARY:
        return np.column_stack([data.X, data.A.astype(float)])
    return np.column_stack([data.X, encoding.arm_vectors(data.A, data.K)])


def _expand(F):
    # Own intercept first (the only unpenalized column); constant feature columns
    # such as X[:, 0] or A**2 then have zero spread and drop out of the L1 fit.
    return np.column_stack([np.ones(F.shape[0]), F, F * F])


@dataclass(frozen=True)
class VarianceModel:
    """Floored predictor of the squared residual at a feature row."""

    family: str
    fitted: Any
    floor: float
    hyperparams: dict = field(default_factory=dict)
    n_features: int = 0

    def __post_init__(self):
        if not self.floor > 0:
            raise InvalidInput("variance floor must be positive")

    def raw_predict(self, F):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        if F.shape[1] != self.n_features:
            raise InvalidInput(f"feature row has width {F.shape[1]}, model expects {self.n_features}")
        if self.family == LINEAR:
            return self.fitted.predict(_expand(F))
        if self.family == "constant":
            return np.full(F.shape[0], float(self.fitted))
        return self.fitted.predict(F)

    def predict(self, F):
        return np.maximum(self.raw_predict(F), self.floor)


def constant_variance_model(value, n_features, floor=None) -> VarianceModel:
    """A variance model predicting ``value`` everywhere (homoscedastic weights)."""
    value = float(value)
    return VarianceModel("constant", value, floor if floor is not None else min(value, 1e-6),
                         {"value": value}, n_features)


def predict_variance(model: VarianceModel, feat_row) -> float:
    row = np.asarray(feat_row, dtype=float).ravel()
    return float(model.predict(row[None, :])[0])


# ---------------------------------------------------------------- per-family fit


def _fit_linear(F, y, hp):
    G = _expand(F)
    lam = hp["lam"]
    grid = lambda_grid(G, y)
    return lasso_path(G, y, None, np.append(grid[grid > lam], lam))[-1]


def _fit_forest(F, y, hp, seed):
    return fit_forest(F, y, hp["n_trees"], hp["min_leaf"], seed=seed)


def _fit_boosting(F, y, hp, seed):
    return fit_boosting(F, y, hp["n_rounds"], hp["max_depth"], hp["learning_rate"],
                        hp["subsample"], hp["min_leaf"], seed)


def _fit_fixed(family, F, y, hp, seed):
    if family == LINEAR:
        return _fit_linear(F, y, hp)
    if family == FOREST:
        return _fit_forest(F, y, hp, seed)
    if family == BOOSTING:
        return _fit_boosting(F, y, hp, seed)
    raise InvalidConfig(f"unknown residual family {family!r}")


def _raw(family, fitted, F):
    return fitted.predict(_expand(F) if family == LINEAR else F)


# ---------------------------------------------------------------- tuning


def _tune_linear(F, y, folds, seed):
    G = _expand(F)
    grid = lambda_grid(G, y)
    lam = select_lambda_cv(G, y, None, grid, folds, seed) if len(y) >= folds else float(grid[-1])
    hp = {"lam": lam}
    return hp, _fit_linear(F, y, hp)


def _tune_forest(F, y, seed, grid=FOREST_GRID):
    # Out-of-bag error; the first t trees of the largest forest form the t-tree forest.
    best = None
    t_max = max(grid["n_trees"])
    for min_leaf in sorted(grid["min_leaf"], reverse=True):
        forest = fit_forest(F, y, t_max, min_leaf, seed=seed)
        for t in sorted(grid["n_trees"]):
            sub = forest.truncated(t)
            oob = sub.oob_predictions(F)
            ok = ~np.isnan(oob)
            mse = float(np.mean((oob[ok] - y[ok]) ** 2)) if ok.any() else np.inf
            if best is None or mse < best[0]:
                best = (mse, {"n_trees": t, "min_leaf": min_leaf}, sub)
    return best[1], best[2]


def _tune_boosting(F, y, seed, params=None):
    hp = dict(BOOSTING_DEFAULTS, **(params or {}))
    n = len(y)
    rng = np.random.default_rng(seed)
    n_hold = int(round(hp["holdout"] * n))
    if n_hold >= 1 and n - n_hold >= 2:
        perm = rng.permutation(n)
        hold, train = perm[:n_hold], perm[n_hold:]
        model = _fit_boosting(F[train], y[train], hp, seed)
        curve = np.mean((model.staged_predict(F[hold]) - y[hold]) ** 2, axis=1)
        hp["n_rounds"] = int(np.argmin(curve))
    tuned = {k: hp[k] for k in ("n_rounds", "max_depth", "learning_rate", "subsample", "min_leaf")}
    return tuned, _fit_boosting(F, y, tuned, seed)


def tune_family(F, sq_resid, family, folds=5, seed=0, hyperparams=None):
    """Tune one family on the full sample; returns ``(hyperparams, fitted)``."""
    F = np.asarray(F, dtype=float)
    y = np.asarray(sq_resid, dtype=float)
    if family == LINEAR:
        if hyperparams and "lam" in hyperparams:
            return dict(hyperparams), _fit_linear(F, y, hyperparams)
        return _tune_linear(F, y, folds, seed)
    if family == FOREST:
        if hyperparams and "n_trees" in hyperparams and "min_leaf" in hyperparams:
            return dict(hyperparams), _fit_forest(F, y, hyperparams, seed)
        grid = dict(FOREST_GRID, **(hyperparams or {}))
        return _tune_forest(F, y, seed, grid)
    if family == BOOSTING:
        return _tune_boosting(F, y, seed, hyperparams)
    raise InvalidConfig(f"unknown residual family {family!r}")


def fit_residual_model(F, sq_resid, family=FOREST, hyperparams=None, floor=None, seed=0,
                       folds=5) -> VarianceModel:
    """Tune (unless fully specified by ``hyperparams``) and fit one family on all rows."""
    F, y = _check(F, sq_resid)
    floor = default_floor(y) if floor is None else float(floor)
    if floor <= 0:
        raise InvalidInput("floor must be positive")
    hp, fitted = tune_family(F, y, family, folds, seed, hyperparams)
    return VarianceModel(family, fitted, floor, hp, F.shape[1])


def _check(F, sq_resid):
    F = np.asarray(F, dtype=float)
    y = np.asarray(sq_resid, dtype=float).ravel()
    if F.ndim != 2 or F.shape[0] != y.shape[0]:
        raise InvalidInput("features and squared residuals disagree in length")
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(y))):
        raise InvalidInput("features or squared residuals contain NaN or Inf")
    if np.any(y < 0):
        raise InvalidInput("squared residuals must be nonnegative")
    return F, y


@dataclass(frozen=True)
class FamilySelection:
    """Outcome of the internal CV.

    ``fold_ids`` and ``fold_models`` (one fitted model of the chosen family
    per fold) allow out-of-fold prediction of every training row.
    """

    family: str
    hyperparams: dict
    cv_mse: dict
    model: VarianceModel
    fold_ids: np.ndarray
    fold_models: tuple

    def cross_fit_predict(self, F):
        """Floored prediction of each row from the fold model that did not see it."""
        F = np.atleast_2d(np.asarray(F, dtype=float))
        if F.shape[0] != self.fold_ids.shape[0]:
            raise InvalidInput("cross-fitted prediction needs the training rows")
        out = np.empty(F.shape[0])
        for k, fitted in enumerate(self.fold_models):
            test = self.fold_ids == k
            out[test] = _raw(self.family, fitted, F[test])
        return np.maximum(out, self.model.floor)


def select_family_cv(F, sq_resid, candidates: Sequence[str] = FAMILIES, folds=5, seed=0,
                     floor=None, hyperparams: dict | None = None) -> FamilySelection:
    """Tune each candidate on all rows, then pick the lowest K-fold test MSE.

    Hyperparameters are tuned once on the full sample and held fixed inside
    the folds. Test-fold predictions are floored before scoring. Ties (up to
    rounding error) go to the simpler family (linear, forest, boosting). ``hyperparams``
    maps a family to settings that override its tuning.
    """
    F, y = _check(F, sq_resid)
    if not candidates:
        raise InvalidConfig("need at least one residual family")
    unknown = set(candidates) - set(FAMILIES)
    if unknown:
        raise InvalidConfig(f"unknown residual families {sorted(unknown)}")
    ids = _fold_ids(len(y), folds, seed)
    floor = default_floor(y) if floor is None else float(floor)
    if floor <= 0:
        raise InvalidInput("floor must be positive")
    ordered = [f for f in FAMILIES if f in candidates]
    tuned, cv, fold_models = {}, {}, {}
    for fam in ordered:
        hp, fitted = tune_family(F, y, fam, folds, seed, (hyperparams or {}).get(fam))
        tuned[fam] = (hp, fitted)
        err, models = 0.0, []
        for k in range(folds):
            test = ids == k
            m = _fit_fixed(fam, F[~test], y[~test], hp, seed + k + 1)
            pred = np.maximum(_raw(fam, m, F[test]), floor)
            err += np.mean((pred - y[test]) ** 2)
            models.append(m)
        cv[fam] = float(err / folds)
        fold_models[fam] = tuple(models)
    tie = 1e-10 * (float(np.mean(y * y)) + 1e-300)
    best = ordered[0]
    for fam in ordered[1:]:
        if cv[fam] < cv[best] - tie:
            best = fam
    hp, fitted = tuned[best]
    return FamilySelection(best, hp, cv, VarianceModel(best, fitted, floor, hp, F.shape[1]),
                           ids, fold_models[best])
