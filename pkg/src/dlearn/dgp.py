"""The eight simulation scenarios: closed-form m, delta and sigma^2 plus a sampler.

Covariates are i.i.d. U[-1, 1] and column 0 of ``X`` is the intercept, so
``X[:, j]`` is covariate ``X_j`` and ``p`` counts the intercept. Scenarios
1-6 have arms ``-1/+1`` assigned with probability 1/2; scenarios 7-8 have
four arms assigned with probability 1/4. Outcomes are

    R = m(X) + delta(X) A + sigma(X) Z            (binary)
    R = m(X) + delta_A(X) + sigma(X) Z            (multi-arm)

with ``Z ~ N(0, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import encoding
from .dataset import BINARY, MULTI, Dataset
from .errors import InvalidConfig


@dataclass(frozen=True)
class ScenarioSpec:
    """One scenario. ``delta`` returns shape ``(n,)`` (binary) or ``(n, K)``."""

    id: int
    mode: str
    K: int
    n: int
    p: int
    min_p: int
    main: Callable
    delta: Callable
    sigma2: Callable

    @property
    def pi(self):
        return 1.0 / self.K

    def f_opt(self, X):
        """True decision function: ``2 delta`` (binary) or ``sum_k delta_k u_k``."""
        X = np.atleast_2d(X)
        d = self.delta(X)
        if self.mode == BINARY:
            return 2.0 * d
        return d @ encoding.simplex_vertices(self.K).vertices

    def optimal_arm(self, X):
        X = np.atleast_2d(X)
        d = self.delta(X)
        if self.mode == BINARY:
            return np.where(d >= 0, 1, -1)
        return encoding.argmax_arm(d)

    def working_variance(self, A, X, residualized=False):
        """Conditional second moment of the working-model error given ``(A, X)``.

        For binary data the error of ``2RA = 2 delta(X) + e`` is
        ``2A(m(X) + sigma Z)``, with second moment ``4 (m^2 + sigma^2)``;
        with ``residualized=True`` the main effect is taken as known and
        removed (RD-Learning with exact ``m``), leaving ``4 sigma^2``.
        For multi-arm data the error of ``K/(K-1) R = u_A' f(X) + e`` is
        ``K/(K-1)(m + sigma Z) + sum_j delta_j / (K-1)``.
        """
        X = np.atleast_2d(X)
        m = 0.0 if residualized else self.main(X)
        s2 = self.sigma2(X)
        if self.mode == BINARY:
            return 4.0 * (m * m + s2)
        K = self.K
        c = K / (K - 1)
        shift = c * m + self.delta(X).sum(axis=1) / (K - 1)
        return shift * shift + c * c * s2


def _s1_delta(X):
    return 0.5 * (0.9 - X[:, 1])


def _s7_delta(X):
    x1, x2, x3, x4 = X[:, 1], X[:, 2], X[:, 3], X[:, 4]
    return np.column_stack([
        0.75 + 1.5 * (x1 + x2 + x3 + x4),
        0.75 + 1.5 * (x1 - x2 - x3 + x4),
        0.75 + 1.5 * (x1 - x2 + x3 - x4),
        0.75 + 1.5 * (-x1 + x2 - x3 + x4),
    ])


def _s8_delta(X):
    x1, x2, x3 = X[:, 1], X[:, 2], X[:, 3]
    return np.column_stack([
        0.5 + 2 * x1 + x2 + x3,
        1 + x1 - x2 - x3,
        1.5 + 3 * x1 - x2 + x3,
        1 - x1 - x2 + x3,
    ])


SCENARIOS = {
    1: ScenarioSpec(
        1, BINARY, 2, 200, 30, 4,
        main=lambda X: 1 + 2 * X[:, 1] + X[:, 2] + 0.5 * X[:, 3],
        delta=_s1_delta,
        sigma2=lambda X: np.ones(X.shape[0])),
    2: ScenarioSpec(
        2, BINARY, 2, 200, 30, 4,
        main=lambda X: 1 + 12 * X[:, 1] + 6 * X[:, 2] + 3 * X[:, 3],
        delta=lambda X: 4 * X[:, 1],
        sigma2=lambda X: 0.25 + (X[:, 2] + 1) ** 2),
    3: ScenarioSpec(
        3, BINARY, 2, 200, 30, 5,
        main=lambda X: 1 + 10 * X[:, 1] + 10 * X[:, 2] + 20 * X[:, 3] + 5 * X[:, 4],
        delta=lambda X: 4 * (0.3 - X[:, 1] - X[:, 2]),
        sigma2=lambda X: 1 + 4 * X[:, 3] ** 2),
    4: ScenarioSpec(
        4, BINARY, 2, 200, 30, 5,
        main=lambda X: 1 + 10 * X[:, 1] + 6 * X[:, 1] ** 2 - 6 * X[:, 2] ** 2 + 10 * X[:, 3],
        delta=lambda X: 2 * X[:, 2] ** 2 + 1.5 * X[:, 3] + 3 * X[:, 4],
        sigma2=lambda X: 0.25 + (0.3 - X[:, 1] - X[:, 2]) ** 2),
    5: ScenarioSpec(
        5, BINARY, 2, 100, 30, 6,
        main=lambda X: (1 + 10 * X[:, 1] + 10 * X[:, 2] + 20 * X[:, 3] + 20 * X[:, 5]
                        + 10 * X[:, 1] * X[:, 2]),
        delta=lambda X: 1.25 * X[:, 3] + 2.5 * X[:, 4],
        sigma2=lambda X: 1 + 0.1 * (1 + X[:, 1] ** 2)),
    6: ScenarioSpec(
        6, BINARY, 2, 200, 30, 7,
        main=lambda X: (1 + 5 * np.cos(X[:, 1]) ** 2 + 10 * X[:, 1] * X[:, 2] + 20 * X[:, 2]
                        + 30 * X[:, 5]),
        delta=lambda X: 3 * X[:, 1] + 2 * X[:, 2] + 2 * X[:, 5] ** 2,
        sigma2=lambda X: 0.5 + 0.5 * (1 - 0.25 * X[:, 6]) ** 3),
    7: ScenarioSpec(
        7, MULTI, 4, 200, 20, 5,
        main=lambda X: 1 + 2 * X[:, 1] + 2 * X[:, 2],
        delta=_s7_delta,
        sigma2=lambda X: 0.25 + 0.2 * (1.5 - X[:, 2]) ** 2),
    8: ScenarioSpec(
        8, MULTI, 4, 200, 20, 7,
        main=lambda X: 1 + X[:, 5] + 3 * X[:, 6] + 2 * X[:, 1] * X[:, 2],
        delta=_s8_delta,
        sigma2=lambda X: 0.5 + 2 * X[:, 2] * (X[:, 2] > 0)),
}


def scenario(sid: int) -> ScenarioSpec:
    try:
        return SCENARIOS[int(sid)]
    except (KeyError, ValueError):
        raise InvalidConfig(f"unknown scenario {sid!r}; choose 1-8") from None


@dataclass(frozen=True)
class LabeledDataset:
    """Simulated data with its ground truth."""

    dataset: Dataset
    truth_scores: np.ndarray
    optimal: np.ndarray
    spec: ScenarioSpec

    def truth_rule(self, X):
        return self.spec.optimal_arm(X)


def rng_for(seed) -> np.random.Generator:
    """Counter-based generator keyed by an integer or a ``SeedSequence``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def generate(spec: ScenarioSpec | int, n: int | None = None, p: int | None = None,
             seed=0) -> LabeledDataset:
    """Draw ``n`` rows of scenario ``spec`` with ``p`` columns (intercept included)."""
    if not isinstance(spec, ScenarioSpec):
        spec = scenario(spec)
    n = spec.n if n is None else int(n)
    p = spec.p if p is None else int(p)
    if p < spec.min_p:
        raise InvalidConfig(f"scenario {spec.id} needs p >= {spec.min_p}, got {p}")
    if n < 1:
        raise InvalidConfig("n must be positive")
    rng = rng_for(seed)
    X = np.empty((n, p))
    X[:, 0] = 1.0
    X[:, 1:] = rng.uniform(-1.0, 1.0, size=(n, p - 1))
    z = rng.standard_normal(n)
    if spec.mode == BINARY:
        A = np.where(rng.random(n) < 0.5, -1, 1)
        effect = spec.delta(X) * A
    else:
        A = rng.integers(1, spec.K + 1, size=n)
        effect = spec.delta(X)[np.arange(n), A - 1]
    R = spec.main(X) + effect + np.sqrt(spec.sigma2(X)) * z
    data = Dataset(X, A, R, np.full(n, spec.pi), spec.K, spec.mode)
    return LabeledDataset(data, spec.f_opt(X), spec.optimal_arm(X), spec)


def truth_rule(spec: ScenarioSpec | int, x):
    """Optimal arm at one covariate row (intercept first)."""
    if not isinstance(spec, ScenarioSpec):
        spec = scenario(spec)
    return int(spec.optimal_arm(np.asarray(x, dtype=float).reshape(1, -1))[0])
