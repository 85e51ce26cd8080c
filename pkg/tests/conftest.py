import numpy as np
import pytest

from dlearn import Dataset
from dlearn.dataset import BINARY, MULTI


def design(n, p, rng):
    X = np.empty((n, p))
    X[:, 0] = 1.0
    X[:, 1:] = rng.uniform(-1, 1, (n, p - 1))
    return X


def binary_data(X, A, R, pi=0.5):
    n = X.shape[0]
    return Dataset(X, A, R, np.full(n, pi), 2, BINARY)


def multi_data(X, A, R, K, pi=None):
    n = X.shape[0]
    return Dataset(X, A, R, np.full(n, 1.0 / K if pi is None else pi), K, MULTI)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def noisy_binary(rng):
    """Heteroscedastic binary data with a linear interaction."""
    n, p = 300, 6
    X = design(n, p, rng)
    A = rng.choice([-1, 1], n)
    gamma = np.array([0.3, 1.0, -0.5, 0.0, 0.0, 0.0])
    R = 1 + 2 * X[:, 1] + (X @ gamma) * A + (0.3 + np.abs(X[:, 2])) * rng.standard_normal(n)
    return binary_data(X, A, R)


@pytest.fixture
def noisy_multi(rng):
    n, p, K = 300, 4, 3
    X = design(n, p, rng)
    A = rng.integers(1, K + 1, n)
    delta = np.column_stack([X[:, 1], -X[:, 1] + X[:, 2], 0.5 * X[:, 3]])
    R = X[:, 2] + delta[np.arange(n), A - 1] + (0.2 + X[:, 1] ** 2) * rng.standard_normal(n)
    return multi_data(X, A, R, K)


# Lines printed by the acceptance criteria, repeated in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
