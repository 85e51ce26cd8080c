"""Weighted linear-model engines.

Every estimator in the package reduces to one of the solvers here: closed-form
weighted least squares (optionally ridge), weighted LASSO by cyclic coordinate
descent, cross-validated choice of the L1 penalty, propensity-score models,
and the plug-in covariance of a variance-weighted fit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import linalg

from .errors import InvalidConfig, InvalidInput, MissingArm, SingularDesign

CD_TOL = 1e-7
CD_MAX_ITER = 10_000
CD_POLISH_EVERY = 20
N_LAMBDA = 50
LAMBDA_RATIO = 1e-3
PROPENSITY_CLIP = 0.01


@dataclass(frozen=True)
class FitResult:
    """Coefficients of a (possibly penalized) weighted linear fit."""

    coefficients: np.ndarray
    lam: float = 0.0
    objective: float = float("nan")
    converged: bool = True
    iterations: int = 0
    kkt_tol: float = 0.0

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coefficients


@dataclass(frozen=True)
class Regularization:
    """How a linear step is penalized.

    ``kind`` is ``"none"``, ``"lasso"`` or ``"ridge"``. A ``lam`` of ``None``
    with ``kind="lasso"`` means the penalty is chosen by ``folds``-fold CV over
    a log-spaced grid of ``n_lambda`` points ending at ``lambda_ratio * lambda_max``.
    """

    kind: str = "lasso"
    lam: float | None = None
    folds: int = 5
    n_lambda: int = N_LAMBDA
    lambda_ratio: float = LAMBDA_RATIO

    def __post_init__(self):
        if self.kind not in ("none", "lasso", "ridge"):
            raise InvalidConfig(f"unknown regularization kind {self.kind!r}")
        if self.kind == "ridge" and self.lam is None:
            raise InvalidConfig("ridge regularization needs an explicit lam")
        if self.lam is not None and self.lam < 0:
            raise InvalidConfig("lam must be nonnegative")


NONE = Regularization("none")
LASSO_CV = Regularization("lasso")


@dataclass(frozen=True)
class SandwichCovariance:
    matrix: np.ndarray
    n: int

    def standard_errors(self):
        return np.sqrt(np.diag(self.matrix))


@dataclass(frozen=True)
class PropensityModel:
    """Fitted treatment-assignment probabilities over ``K`` ordered arms.

    Probabilities are ``softmax(X @ parameters)`` for the fitted kinds and the
    stored row of ``parameters`` for ``known-constant``; both are clipped to
    ``[clip, 1 - clip]`` and renormalized.
    """

    kind: str
    parameters: np.ndarray
    K: int
    arms: tuple
    clip: float = PROPENSITY_CLIP
    converged: bool = True
    iterations: int = 0

    def raw_proba(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "known-constant":
            return np.tile(self.parameters.ravel(), (X.shape[0], 1))
        return _softmax(X @ self.parameters)

    def predict_proba(self, X):
        P = clip_probabilities(self.raw_proba(X), self.clip)
        return P / P.sum(axis=1, keepdims=True)

    def propensity(self, X, A):
        """Probability of the arm each row actually received."""
        P = self.predict_proba(X)
        lookup = {a: k for k, a in enumerate(self.arms)}
        try:
            idx = np.array([lookup[a] for a in np.asarray(A).tolist()])
        except KeyError as exc:
            raise InvalidInput(f"arm {exc.args[0]!r} unknown to propensity model") from None
        return P[np.arange(P.shape[0]), idx]


# ---------------------------------------------------------------- validation


def _as_design(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInput(f"design must be a nonempty 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("design contains NaN or Inf")
    return X


def _as_vector(v, n, name):
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != n:
        raise InvalidInput(f"{name} has length {v.shape[0]}, expected {n}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput(f"{name} contains NaN or Inf")
    return v


def _check_xyw(X, y, w):
    X = _as_design(X)
    n = X.shape[0]
    y = _as_vector(y, n, "y")
    w = np.ones(n) if w is None else _as_vector(w, n, "w")
    if np.any(w < 0):
        raise InvalidInput("weights must be nonnegative")
    if not np.any(w > 0):
        raise InvalidInput("at least one weight must be positive")
    return X, y, w


def _penalty_mask(p, unpenalized):
    mask = np.ones(p, dtype=bool)
    mask[list(unpenalized)] = False
    return mask


# ---------------------------------------------------------------- least squares


def fit_wls(X, y, w=None, ridge=0.0, unpenalized: Sequence[int] = (0,)) -> FitResult:
    """Solve ``(X'WX + ridge*D) b = X'Wy`` where ``D`` zeroes unpenalized columns.

    Raises ``SingularDesign`` when the system is not numerically invertible.
    """
    X, y, w = _check_xyw(X, y, w)
    if ridge < 0:
        raise InvalidInput("ridge must be nonnegative")
    n, p = X.shape
    d = _penalty_mask(p, unpenalized).astype(float)
    Xw = X * w[:, None]
    G = X.T @ Xw + ridge * np.diag(d)
    b = Xw.T @ y
    beta = _spd_solve(G, b)
    r = y - X @ beta
    obj = (np.sum(w * r * r) + ridge * np.sum(d * beta * beta)) / (2 * n)
    return FitResult(beta, lam=float(ridge), objective=float(obj))


def _spd_solve(G, b):
    s = np.sqrt(np.diag(G))
    if np.any(s <= 0) or not np.all(np.isfinite(G)):
        raise SingularDesign("design has a column with zero weighted norm")
    Gs = G / np.outer(s, s)
    eig = np.linalg.eigvalsh(Gs)
    if eig[0] <= 1e-12 * eig[-1]:
        raise SingularDesign(f"normal equations are singular (min/max eigenvalue {eig[0] / eig[-1]:.3g})")
    c = linalg.cho_factor(Gs)
    sc = s.reshape((-1,) + (1,) * (np.ndim(b) - 1))
    return linalg.cho_solve(c, b / sc) / sc


def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``."""
    if np.any(np.asarray(t) < 0):
        raise InvalidInput("threshold must be nonnegative")
    out = np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- lasso


@njit(cache=True)
def _cd_kernel(Z, r, w, lam, gamma, tol, kkt_tol, max_iter):
    # Cyclic coordinate descent on standardized columns; r is updated in place.
    # After a full sweep that moved something, sweeps visit only the nonzero
    # coefficients until they settle; convergence is declared after a full
    # sweep with no move above tol and a passing KKT check.
    n, q = Z.shape
    col = np.zeros(q)
    for j in range(q):
        s = 0.0
        for i in range(n):
            s += w[i] * Z[i, j] * Z[i, j]
        col[j] = s / n
    it = 0
    full = True
    while it < max_iter:
        it += 1
        dmax = 0.0
        for j in range(q):
            if not full and gamma[j] == 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += w[i] * Z[i, j] * r[i]
            z = g / n + col[j] * gamma[j]
            if z > lam:
                new = (z - lam) / col[j]
            elif z < -lam:
                new = (z + lam) / col[j]
            else:
                new = 0.0
            d = new - gamma[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * Z[i, j]
                gamma[j] = new
                if abs(d) > dmax:
                    dmax = abs(d)
        if dmax >= tol:
            full = False
            continue
        if not full:
            full = True
            continue
        viol = 0.0
        for j in range(q):
            g = 0.0
            for i in range(n):
                g += w[i] * Z[i, j] * r[i]
            g /= n
            if gamma[j] == 0.0:
                v = abs(g) - lam
            elif gamma[j] > 0.0:
                v = abs(g - lam)
            else:
                v = abs(g + lam)
            if v > viol:
                viol = v
        if viol <= kkt_tol:
            return it, True
    return it, False


@dataclass
class _Standardized:
    """Penalized columns with the unpenalized block partialled out, unit-scaled."""

    Z: np.ndarray
    yt: np.ndarray
    w: np.ndarray
    pen: np.ndarray
    unpen: np.ndarray
    active: np.ndarray
    scale: np.ndarray
    coef_y: np.ndarray
    coef_P: np.ndarray
    kkt_tol: float = field(default=0.0)

    def to_original(self, gamma):
        p = len(self.pen) + len(self.unpen)
        beta = np.zeros(p)
        bp = np.zeros(len(self.pen))
        bp[self.active] = gamma / self.scale[self.active]
        beta[self.pen] = bp
        if len(self.unpen):
            beta[self.unpen] = self.coef_y - self.coef_P @ bp
        return beta


def _column_scales(P, w):
    return np.sqrt(np.sum(w[:, None] * P * P, axis=0) / np.sum(w))


def _standardize(X, y, w, unpenalized, tol=CD_TOL):
    p = X.shape[1]
    mask = _penalty_mask(p, unpenalized)
    pen, unpen = np.flatnonzero(mask), np.flatnonzero(~mask)
    P = X[:, pen]
    if len(unpen):
        U = X[:, unpen]
        sw = np.sqrt(w)[:, None]
        coef, *_ = np.linalg.lstsq(U * sw, np.column_stack([y, P]) * sw, rcond=None)
        coef_y, coef_P = coef[:, 0], coef[:, 1:]
        yt = y - U @ coef_y
        Pt = P - U @ coef_P
    else:
        coef_y, coef_P = np.zeros(0), np.zeros((0, len(pen)))
        yt, Pt = y.copy(), P.copy()
    raw = _column_scales(P, w)
    scale = _column_scales(Pt, w)
    active = scale > 1e-10 * np.maximum(raw, 1e-300)
    Z = np.ascontiguousarray(Pt[:, active] / scale[active])
    y_rms = np.sqrt(np.sum(w * yt * yt) / len(yt))
    return _Standardized(Z, yt, w, pen, unpen, active, scale, coef_y, coef_P,
                         kkt_tol=tol * max(1.0, y_rms))


def lambda_max(X, y, w=None, unpenalized: Sequence[int] = (0,)) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    X, y, w = _check_xyw(X, y, w)
    st = _standardize(X, y, w, unpenalized)
    if st.Z.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(st.Z.T @ (w * st.yt))) / len(y))


def lambda_grid(X, y, w=None, n_lambda=N_LAMBDA, ratio=LAMBDA_RATIO, unpenalized=(0,)):
    """Log-spaced descending grid from ``lambda_max`` to ``ratio * lambda_max``."""
    lmax = lambda_max(X, y, w, unpenalized)
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, ratio * lmax, n_lambda)


def _kkt_gap(Z, r, w, lam, gamma):
    g = Z.T @ (w * r) / len(r)
    v = np.where(gamma == 0, np.abs(g) - lam, np.abs(g - lam * np.sign(gamma)))
    return float(v.max()) if v.size else 0.0


def _newton_polish(Z, r, w, lam, gamma, kkt_tol, gram, max_steps=None) -> bool:
    """Finish a stalled coordinate descent with a primal active-set method.

    Coordinate descent crawls when the active columns are nearly collinear
    (many nonzeros relative to n). Starting from its iterate, each step solves
    the stationarity equations on the current support and signs, moves toward
    that solution up to the first sign change (dropping the coordinate that
    hits zero), or, once the support is sign-consistent, adds the worst KKT
    violator. ``gram`` is ``Z' W Z / n``. Supports of ``n - 1`` or more
    columns (the rank bound of the centered design) are left to coordinate
    descent. The result is kept only if the full KKT check passes; otherwise
    ``gamma`` and ``r`` are left untouched and ``False`` is returned.
    """
    n, q = Z.shape
    y = r + Z @ gamma
    g_cur = gamma.copy()
    active = g_cur != 0
    if not active.any() or active.sum() >= n - 1:
        return False
    signs = np.sign(g_cur)
    zy = Z.T @ (w * y) / n
    steps = max_steps or 4 * q
    for _ in range(steps):
        act = np.flatnonzero(active)
        try:
            theta = np.linalg.solve(gram[np.ix_(act, act)], zy[act] - lam * signs[act])
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(theta)):
            return False
        d = theta - g_cur[act]
        cross = (np.sign(theta) != signs[act]) & (d != 0)
        if cross.any():
            t = -g_cur[act][cross] / d[cross]
            k = int(np.argmin(t))
            step = float(np.clip(t[k], 0.0, 1.0))
            g_cur[act] += step * d
            j = act[np.flatnonzero(cross)[k]]
            g_cur[j] = 0.0
            active[j] = False
            signs[j] = 0.0
            if not active.any():
                return False
            continue
        g_cur[act] = theta
        grad = zy - gram[:, act] @ theta
        out = np.where(active, -np.inf, np.abs(grad) - lam)
        j = int(np.argmax(out))
        if out[j] <= kkt_tol:
            res = y - Z[:, act] @ theta
            if _kkt_gap(Z, res, w, lam, g_cur) > kkt_tol:
                return False
            gamma[:] = g_cur
            r[:] = res
            return True
        if active.sum() >= n - 2:
            return False
        active[j] = True
        signs[j] = np.sign(grad[j])
    return False


def lasso_path(X, y, w=None, lambdas=(0.0,), unpenalized: Sequence[int] = (0,),
               tol=CD_TOL, max_iter=CD_MAX_ITER) -> list[FitResult]:
    """Warm-started weighted LASSO fits along ``lambdas`` (taken in the given order).

    Minimizes ``(2n)^-1 sum w_i (y_i - x_i'b)^2 + lam * sum_j |g_j|`` where ``g_j``
    are the coefficients of the penalized columns after partialling out the
    unpenalized block and scaling to unit weighted standard deviation.
    Coefficients are reported on the original scale. After
    ``CD_POLISH_EVERY`` unconverged sweeps an exact solve on the current
    support is attempted (see ``_newton_polish``); each failed attempt
    doubles the number of sweeps before the next one.
    """
    X, y, w = _check_xyw(X, y, w)
    st = _standardize(X, y, w, unpenalized, tol)
    n = len(y)
    gamma = np.zeros(st.Z.shape[1])
    r = st.yt.copy()
    gram = None
    out = []
    for lam in lambdas:
        if lam < 0:
            raise InvalidInput("lambda must be nonnegative")
        it, every = 0, CD_POLISH_EVERY
        while True:
            step, conv = _cd_kernel(st.Z, r, st.w, float(lam), gamma, tol, st.kkt_tol,
                                    min(every, max_iter - it))
            it += step
            if conv or it >= max_iter:
                break
            if gram is None:
                gram = st.Z.T @ (st.w[:, None] * st.Z) / n
            if _newton_polish(st.Z, r, st.w, float(lam), gamma, st.kkt_tol, gram):
                conv = True
                break
            every *= 2
        beta = st.to_original(gamma)
        obj = np.sum(w * r * r) / (2 * n) + lam * np.sum(np.abs(gamma))
        out.append(FitResult(beta, lam=float(lam), objective=float(obj), converged=bool(conv),
                             iterations=int(it), kkt_tol=st.kkt_tol))
    return out


def fit_lasso(X, y, w=None, lam=0.0, tol=CD_TOL, max_iter=CD_MAX_ITER,
              unpenalized: Sequence[int] = (0,)) -> FitResult:
    return lasso_path(X, y, w, [lam], unpenalized, tol, max_iter)[0]


def lasso_kkt_violation(X, y, w, result: FitResult, unpenalized: Sequence[int] = (0,)) -> float:
    """Largest violation of the LASSO optimality conditions for ``result``.

    Gradients are taken against each penalized column rescaled by its weighted
    standard deviation after partialling out the unpenalized block, i.e. the
    scale on which the penalty acts. Unpenalized columns must have zero gradient.
    """
    X, y, w = _check_xyw(X, y, w)
    n = len(y)
    st = _standardize(X, y, w, unpenalized)
    beta = result.coefficients
    r = y - X @ beta
    viol = 0.0
    if len(st.unpen):
        viol = float(np.max(np.abs(X[:, st.unpen].T @ (w * r)) / n))
    lam = result.lam
    for k, j in enumerate(st.pen):
        if not st.active[k]:
            continue
        g = X[:, j] @ (w * r) / n / st.scale[k]
        b = beta[j]
        v = abs(g) - lam if b == 0 else abs(g - lam * np.sign(b))
        viol = max(viol, v)
    return viol


def _fold_ids(n, folds, seed):
    if folds < 2:
        raise InvalidConfig("need at least 2 folds")
    if n < folds:
        raise InvalidConfig(f"{n} rows cannot be split into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def cv_lambda_errors(X, y, w, grid, folds=5, seed=0, unpenalized: Sequence[int] = (0,)):
    """Fold-averaged weighted squared prediction error for each grid value."""
    X, y, w = _check_xyw(X, y, w)
    grid = np.asarray(grid, dtype=float)
    ids = _fold_ids(len(y), folds, seed)
    err = np.zeros(len(grid))
    used = 0
    for k in range(folds):
        test = ids == k
        wt = w[test]
        if wt.sum() <= 0 or w[~test].sum() <= 0:
            continue
        path = lasso_path(X[~test], y[~test], w[~test], grid, unpenalized)
        for g, fit in enumerate(path):
            res = y[test] - X[test] @ fit.coefficients
            err[g] += np.sum(wt * res * res) / wt.sum()
        used += 1
    return err / max(used, 1)


def select_lambda_cv(X, y, w, grid, folds=5, seed=0, unpenalized: Sequence[int] = (0,)) -> float:
    """Grid value with the lowest CV error; ties go to the larger penalty."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidConfig("lambda grid is empty")
    if np.any(np.diff(grid) > 0):
        raise InvalidConfig("lambda grid must be sorted in descending order")
    n = np.asarray(X).shape[0]
    _fold_ids(n, folds, seed)  # validates folds against n
    if grid.size == 1:
        return float(grid[0])
    err = cv_lambda_errors(X, y, w, grid, folds, seed, unpenalized)
    return float(grid[int(np.argmin(err))])


def fit_penalized(X, y, w=None, reg: Regularization = LASSO_CV, seed=0,
                  unpenalized: Sequence[int] = (0,)) -> FitResult:
    """Dispatch to the solver named by ``reg``; LASSO without ``lam`` tunes it by CV."""
    if reg.kind == "none":
        return fit_wls(X, y, w, 0.0, unpenalized)
    if reg.kind == "ridge":
        return fit_wls(X, y, w, reg.lam, unpenalized)
    if reg.lam is not None:
        return fit_lasso(X, y, w, reg.lam, unpenalized=unpenalized)
    grid = lambda_grid(X, y, w, reg.n_lambda, reg.lambda_ratio, unpenalized)
    lam = select_lambda_cv(X, y, w, grid, reg.folds, seed, unpenalized)
    path = lasso_path(X, y, w, grid[grid >= lam], unpenalized)
    return path[-1]


# ---------------------------------------------------------------- propensity


def clip_probabilities(P, clip):
    return np.clip(P, clip, 1.0 - clip)


def _softmax(eta):
    eta = eta - eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def constant_propensity(probs, arms, clip=PROPENSITY_CLIP) -> PropensityModel:
    probs = np.asarray(probs, dtype=float).reshape(1, -1)
    if probs.shape[1] != len(arms) or abs(probs.sum() - 1) > 1e-9 or np.any(probs <= 0):
        raise InvalidInput("constant propensities must be positive and sum to 1 over the arms")
    return PropensityModel("known-constant", probs, len(arms), tuple(arms), clip)


def _internal_scaling(X):
    # Standardize non-constant columns; gradient descent is hopeless on raw clinical units.
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd <= 1e-12
    mu[const] = 0.0
    sd[const] = 1.0
    return mu, sd


def _unscale(theta, mu, sd, X):
    # theta acts on (X - mu)/sd; fold the shift into a constant column if one exists.
    out = theta / sd[:, None]
    shift = (mu / sd) @ theta
    const_cols = np.flatnonzero(np.all(X == X[0], axis=0) & (X[0] != 0))
    if len(const_cols):
        j = const_cols[0]
        out[j] -= shift / X[0, j]
    else:
        if np.any(np.abs(shift) > 0):
            raise InvalidInput("propensity design needs an intercept column")
    return out


def fit_propensity(X, A, K=None, clip=PROPENSITY_CLIP, max_iter=None, tol=1e-8) -> PropensityModel:
    """Fit Pr(A = a | X) by logistic (two arms) or multinomial (more arms) regression.

    Two arms use iteratively reweighted least squares; more arms use full-batch
    gradient descent with step halving. Under perfect separation the fit stops
    with ``converged=False``; clipped predictions remain valid.
    """
    X = _as_design(X)
    A = np.asarray(A).ravel()
    if A.shape[0] != X.shape[0]:
        raise InvalidInput("treatment vector length does not match design")
    arms = tuple(sorted(set(A.tolist())))
    if K is None:
        K = len(arms)
    if K < 2:
        raise InvalidConfig("need at least two arms")
    if not 0 < clip < 1.0 / K:
        raise InvalidConfig(f"clip must lie in (0, 1/K) = (0, {1.0 / K:.4g})")
    if len(arms) < K:
        if set(arms) <= {-1, 1}:
            expected = (-1, 1)
        else:
            expected = tuple(range(1, K + 1))
        missing = sorted(set(expected) - set(arms))
        raise MissingArm(f"arm(s) {missing} never observed")
    if len(arms) > K:
        raise InvalidInput(f"observed {len(arms)} arms but K={K}")
    idx = np.searchsorted(np.array(arms), A)
    mu, sd = _internal_scaling(X)
    Xs = (X - mu) / sd
    if K == 2:
        theta, conv, it = _logistic_irls(Xs, (idx == 1).astype(float), max_iter or 100, tol)
        params = np.column_stack([np.zeros(X.shape[1]), theta])
    else:
        Y = np.eye(K)[idx]
        params, conv, it = _multinomial_gd(Xs, Y, max_iter or 5000, tol)
    params = _unscale(params, mu, sd, X)
    kind = "logistic" if K == 2 else "multinomial"
    return PropensityModel(kind, params, K, arms, clip, conv, it)


def _logistic_irls(X, y, max_iter, tol):
    theta = np.zeros(X.shape[1])
    for it in range(1, max_iter + 1):
        eta = X @ theta
        if np.max(np.abs(eta)) > 30:
            return theta, False, it
        m = 1.0 / (1.0 + np.exp(-eta))
        v = np.maximum(m * (1 - m), 1e-12)
        z = eta + (y - m) / v
        sw = np.sqrt(v)[:, None]
        new, *_ = np.linalg.lstsq(X * sw, z * sw.ravel(), rcond=None)
        step = np.max(np.abs(new - theta))
        theta = new
        if step < tol:
            return theta, True, it
    return theta, False, max_iter


def _multinomial_gd(X, Y, max_iter, tol):
    n, p = X.shape
    K = Y.shape[1]
    theta = np.zeros((p, K))

    def loss(t):
        eta = X @ t
        eta = eta - eta.max(axis=1, keepdims=True)
        return -np.sum(Y * (eta - np.log(np.exp(eta).sum(axis=1, keepdims=True)))) / n

    f = loss(theta)
    step = 1.0
    for it in range(1, max_iter + 1):
        g = X.T @ (_softmax(X @ theta) - Y) / n
        g[:, 0] = 0.0  # first arm is the reference category
        gn = np.sum(g * g)
        if np.sqrt(gn) < tol:
            return theta, True, it
        step = min(step * 2.0, 1e6)
        while True:
            cand = theta - step * g
            fc = loss(cand)
            if fc <= f - 0.5 * step * gn:
                break
            step *= 0.5
            if step < 1e-14:
                return theta, False, it
        theta, f = cand, fc
        if np.max(np.abs(theta)) > 50:
            return theta, False, it
    return theta, False, max_iter


# ---------------------------------------------------------------- inference


def sandwich_covariance(X, sigma2) -> SandwichCovariance:
    """Plug-in covariance ``[sum_i x_i x_i' / sigma2_i]^-1`` of a variance-weighted fit."""
    X = _as_design(X)
    sigma2 = _as_vector(sigma2, X.shape[0], "sigma2")
    if np.any(sigma2 <= 0):
        raise InvalidInput("variances must be positive")
    G = X.T @ (X / sigma2[:, None])
    p = G.shape[0]
    cov = _spd_solve(G, np.eye(p))
    cov = 0.5 * (cov + cov.T)
    return SandwichCovariance(cov, X.shape[0])
