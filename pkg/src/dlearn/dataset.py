from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidMode

BINARY = "binary"
MULTI = "multi"


@dataclass(frozen=True)
class Dataset:
    """Observed ``(X, A, R)`` triplets with the propensity of each received arm.

    ``X`` carries an intercept in column 0. Binary data use arms ``-1, +1``;
    multi-arm data use ``1..K``.
    """

    X: np.ndarray
    A: np.ndarray
    R: np.ndarray
    pi: np.ndarray
    K: int = 2
    mode: str = BINARY

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise InvalidInput("X must be a nonempty 2-d array")
        n = X.shape[0]
        A = np.asarray(self.A).ravel()
        R = np.asarray(self.R, dtype=float).ravel()
        pi = np.asarray(self.pi, dtype=float).ravel()
        if not (A.shape[0] == R.shape[0] == pi.shape[0] == n):
            raise InvalidInput("X, A, R and pi must have the same number of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(R)) and np.all(np.isfinite(pi))):
            raise InvalidInput("dataset contains NaN or Inf")
        if not np.all(X[:, 0] == 1.0):
            raise InvalidInput("column 0 of X must be the intercept (all ones)")
        if np.any(pi <= 0) or np.any(pi > 1):
            raise InvalidInput("propensities must lie in (0, 1]")
        if self.mode == BINARY:
            if self.K != 2:
                raise InvalidMode("binary datasets have K = 2")
            if not np.all(np.isin(A, (-1, 1))):
                raise InvalidMode("binary arms must be -1 or +1")
        elif self.mode == MULTI:
            if self.K < 2:
                raise InvalidMode("multi-arm datasets need K >= 2")
            if np.any((A < 1) | (A > self.K)) or np.any(A != np.round(A)):
                raise InvalidInput(f"multi-arm labels must be integers in 1..{self.K}")
        else:
            raise InvalidMode(f"unknown mode {self.mode!r}")
        A = A.astype(int)
        for name, val in (("X", X), ("A", A), ("R", R), ("pi", pi)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.A[idx], self.R[idx], self.pi[idx], self.K, self.mode)

    def require(self, mode):
        if self.mode != mode:
            raise InvalidMode(f"operation needs {mode} data, got {self.mode}")
