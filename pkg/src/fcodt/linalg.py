"""Dense linear algebra for ridge-projection splits.

Everything here is deterministic: identical inputs produce bit-identical
outputs. Matrices are plain float64 numpy arrays in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NotPositiveDefiniteError(ValueError):
    """Raised when a Cholesky pivot is not strictly positive."""

    def __init__(self, pivot_index: int):
        self.pivot_index = pivot_index
        super().__init__(f"matrix is not positive definite (pivot {pivot_index})")


class SingularSystemError(ValueError):
    """Raised when an unregularized system is rank-deficient."""


@dataclass(frozen=True)
class RidgeSolution:
    """Closed-form ridge fit: weights over the input columns plus an
    unpenalized intercept."""

    weights: np.ndarray
    intercept: float
    lam: float


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got ndim={X.ndim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix contains non-finite entries")
    return X

def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def cholesky_factor(A: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric matrix.

    Raises NotPositiveDefiniteError naming the offending pivot when the
    matrix is not positive definite within floating-point tolerance.
    """
    A = _as_matrix(A)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {n}x{m}")
    L = np.zeros_like(A)
    for j in range(n):
        # pivot = A[j,j] minus the squared norm of the row built so far
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= 0.0 or not np.isfinite(pivot):
            raise NotPositiveDefiniteError(j)
        ljj = np.sqrt(pivot)
        L[j, j] = ljj
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / ljj
    return L


def _solve_triangular(L: np.ndarray, b: np.ndarray, lower: bool) -> np.ndarray:
    n = L.shape[0]
    x = np.zeros_like(b)
    if lower:
        for i in range(n):
            x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    else:
        for i in range(n - 1, -1, -1):
            x[i] = (b[i] - L[i, i + 1:] @ x[i + 1:]) / L[i, i]
    return x


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for symmetric positive-definite A via Cholesky."""
    A = _as_matrix(A)
    b = _as_vector(b)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape[0]}x{A.shape[1]}")
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape[0]}x{A.shape[1]}, b has length {b.shape[0]}")
    L = cholesky_factor(A)
    z = _solve_triangular(L, b, lower=True)
    return _solve_triangular(L.T, z, lower=False)


def solve_ridge(X: np.ndarray, y: np.ndarray, lam: float,
                fit_intercept: bool = True) -> RidgeSolution:
    """Minimize ||y - X w - b 1||^2 + lam ||w||^2 with the intercept b
    unpenalized (b fixed to 0 when fit_intercept is off).

    Solved through the regularized normal equations on centered data; a
    rank check guards the factorization when lam is 0.
    """
    X = _as_matrix(X)
    y = _as_vector(y)
    n, d = X.shape
    if n != y.shape[0]:
        raise ValueError(f"dimension mismatch: X has {n} rows, y has length {y.shape[0]}")
    if n < 1:
        raise ValueError("need at least one sample")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")

    if fit_intercept:
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        Xc = X - x_mean
        yc = y - y_mean
    else:
        Xc, yc = X, y

    gram = Xc.T @ Xc
    if lam == 0.0:
        if np.linalg.matrix_rank(Xc) < d:
            raise SingularSystemError(
                "singular system: design matrix is rank-deficient at lambda=0")
    else:
        gram = gram + lam * np.eye(d)
    try:
        w = spd_solve(gram, Xc.T @ yc)
    except NotPositiveDefiniteError as exc:
        raise SingularSystemError(f"singular system: {exc}") from exc

    intercept = float(y_mean - x_mean @ w) if fit_intercept else 0.0
    return RidgeSolution(weights=w, intercept=intercept, lam=float(lam))


def predict_linear(model: RidgeSolution, X: np.ndarray) -> np.ndarray:
    """Row-wise dot(weights, row) + intercept."""
    X = _as_matrix(X)
    if X.shape[1] != model.weights.shape[0]:
        raise ValueError(
            f"dimension mismatch: model has {model.weights.shape[0]} weights, X has {X.shape[1]} columns")
    return X @ model.weights + model.intercept
