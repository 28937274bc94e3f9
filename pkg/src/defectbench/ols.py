"""Ordinary least squares with a ridge jitter fallback for singular designs."""

from __future__ import annotations

import numpy as np

RIDGE_JITTER = 1e-8


def ols_coefficients(X: np.ndarray, y: np.ndarray, jitter: float = RIDGE_JITTER) -> np.ndarray:
    """Solve min ||[1 X] beta - y||^2 via jittered normal equations.

    Returns beta with the intercept first. The jitter keeps exactly
    collinear designs solvable instead of raising.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([np.ones(X.shape[0]), X])
    a = design.T @ design
    a[np.diag_indices_from(a)] += jitter
    return np.linalg.solve(a, design.T @ y)


def ols_predict(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return beta[0] + X @ beta[1:]


def ols_r_squared(y: np.ndarray, X: np.ndarray) -> float:
    """In-sample R^2 of regressing y on X (with intercept).

    A zero-variance y is reported as 1.0: the intercept alone predicts it.
    """
    y = np.asarray(y, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0
    resid = y - ols_predict(X, ols_coefficients(X, y))
    r2 = 1.0 - float(resid @ resid) / ss_tot
    return min(r2, 1.0)
