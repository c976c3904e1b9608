"""Failure-rate regression models, usable as scikit-learn estimators.

``FailureRateRegression(degree=1)`` fits ``failed ~ 1 + U + D + T``;
``degree=2`` adds every square and pairwise product, in the order
``U², U·D, U·T, D², D·T, T²``.  Least squares is solved by a QR
factorization of the column-scaled design, never the normal equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from spare.exceptions import SingularDesign

MODELS = {"linear": 1, "poly2": 2}


def design_matrix(X, degree: int = 1) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    columns = [np.ones(n)]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(p), d):
            columns.append(np.prod(X[:, combo], axis=1))
    return np.column_stack(columns)


def ols(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of ``y ~ A`` via Householder QR."""
    n, p = A.shape
    if n < p:
        raise SingularDesign(f"{n} observations cannot determine {p} coefficients")
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise SingularDesign("design has an all-zero column")
    Q, R = np.linalg.qr(A / scale)
    diag = np.abs(np.diag(R))
    if diag.min() <= max(n, p) * np.finfo(float).eps * diag.max() * 1e3:
        raise SingularDesign("design matrix is rank deficient")
    return solve_triangular(R, Q.T @ y) / scale


def r_squared(y: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        # constant target: a perfect fit explains "everything"
        return 1.0 if ss_res <= 1e-24 * max(len(y), 1) else 0.0
    return 1.0 - ss_res / ss_tot


class FailureRateRegression(RegressorMixin, BaseEstimator):
    """Polynomial least-squares model of the failed fraction.

    Parameters
    ----------
    degree : {1, 2}
        1 gives the plain linear model, 2 the full quadratic one.

    Attributes
    ----------
    coef_ : ndarray
        Coefficients in design order, intercept first.
    r2_ : float
        Coefficient of determination on the training data.
    """

    def __init__(self, degree: int = 1):
        self.degree = degree

    def fit(self, X, y):
        if self.degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {self.degree!r}")
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        A = design_matrix(X, self.degree)
        self.coef_ = ols(A, y)
        self.r2_ = r_squared(y, A @ self.coef_)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return design_matrix(X, self.degree) @ self.coef_

    @property
    def intercept_(self) -> float:
        check_is_fitted(self, "coef_")
        return float(self.coef_[0])


@dataclass(frozen=True)
class RegressionFit:
    model: str
    coefficients: tuple[float, ...]
    r_squared: float

    def predict(self, users, devices, threshold) -> np.ndarray:
        X = np.column_stack([np.atleast_1d(users), np.atleast_1d(devices), np.atleast_1d(threshold)])
        return design_matrix(X.astype(float), MODELS[self.model]) @ np.asarray(self.coefficients)

    def terms(self) -> list[str]:
        names = ["1", "U", "D", "T"]
        if self.model == "poly2":
            names += [f"{a}*{b}" if a != b else f"{a}^2" for a, b in combinations_with_replacement("UDT", 2)]
        return names


def rows_to_xy(rows) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[r.users, r.devices, r.threshold] for r in rows], dtype=float)
    y = np.array([r.failed_fraction for r in rows], dtype=float)
    return X, y


def fit_model(rows, model: str = "linear") -> RegressionFit:
    if model not in MODELS:
        raise ValueError(f"model must be one of {sorted(MODELS)}")
    X, y = rows_to_xy(rows)
    if len(X) < 5:
        raise SingularDesign("need at least 5 rows")
    est = FailureRateRegression(degree=MODELS[model]).fit(X, y)
    return RegressionFit(model, tuple(float(c) for c in est.coef_), est.r2_)


def fit_linear(rows) -> RegressionFit:
    return fit_model(rows, "linear")


def fit_poly2(rows) -> RegressionFit:
    return fit_model(rows, "poly2")
