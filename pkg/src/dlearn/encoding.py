"""Angle-based simplex treatment coding and the Kronecker design it induces.

Arm ``k`` of ``K`` is mapped to a unit vertex ``u_k`` of a regular simplex in
``R^{K-1}``. A linear multi-arm score ``f(x) = B'x`` then contributes
``u_a' B' x`` to the outcome of a subject on arm ``a``, which equals
``kron(x, u_a) @ vec_rows(B)``; multi-arm fitting is thereby a single
weighted least-squares problem on the encoded rows.

``vec_rows(B)`` is the column-stacking of ``B'``, i.e. the rows of ``B``
concatenated. Always go through :func:`vectorize` / :func:`devectorize`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidInput


@dataclass(frozen=True)
class SimplexVertices:
    K: int
    vertices: np.ndarray  # (K, K-1); row k-1 is u_k

    def __getitem__(self, arm):
        return self.vertices[arm - 1]


def simplex_vertices(K: int) -> SimplexVertices:
    if K < 2:
        raise InvalidConfig("simplex coding needs K >= 2")
    d = K - 1
    U = np.empty((K, d))
    U[0] = np.ones(d) / np.sqrt(d)
    c = (1 + np.sqrt(K)) / np.sqrt(d ** 3)
    for a in range(2, K + 1):
        U[a - 1] = -c * np.ones(d)
        U[a - 1, a - 2] += np.sqrt(K / d)
    U.setflags(write=False)
    return SimplexVertices(K, U)


def arm_vectors(A, K: int) -> np.ndarray:
    """Stack ``u_{a_i}`` for integer labels in ``1..K``."""
    A = np.asarray(A)
    if np.any((A < 1) | (A > K)) or np.any(A != np.round(A)):
        raise InvalidInput(f"arm labels must be integers in 1..{K}")
    return simplex_vertices(K).vertices[A.astype(int) - 1]


def encode_row(x, vertex) -> np.ndarray:
    """``kron(x, u)``: the row ``x_*`` with ``x_*' vec_rows(B) = u'B'x``."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(vertex, dtype=float).ravel()
    if x.size == 0 or u.size == 0:
        raise InvalidInput("covariate row and vertex must be nonempty")
    return np.kron(x, u)


def encode_design(X, A, K: int) -> np.ndarray:
    """Row-wise :func:`encode_row` for a whole design; shape ``(n, p*(K-1))``."""
    X = np.asarray(X, dtype=float)
    U = arm_vectors(A, K)
    if U.shape[0] != X.shape[0]:
        raise InvalidInput("treatment vector length does not match design")
    return (X[:, :, None] * U[:, None, :]).reshape(X.shape[0], -1)


def vectorize(B) -> np.ndarray:
    return np.asarray(B, dtype=float).reshape(-1)


def devectorize(B_star, p: int, K: int) -> np.ndarray:
    B_star = np.asarray(B_star, dtype=float).ravel()
    if B_star.size != p * (K - 1):
        raise InvalidInput(f"expected {p * (K - 1)} coefficients for p={p}, K={K}, got {B_star.size}")
    return B_star.reshape(p, K - 1)


def rank_scores(F, K: int) -> np.ndarray:
    """Per-arm scores ``u_k' f`` for each row of ``F`` (shape ``(n, K-1)``)."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return F @ simplex_vertices(K).vertices.T


def argmax_arm(scores) -> np.ndarray:
    """1-based arm with the highest score; the lowest index wins ties."""
    return np.argmax(np.atleast_2d(scores), axis=1) + 1
