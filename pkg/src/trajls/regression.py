"""Pooled ordinary least squares over trajectories and trajectory risk functionals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._utils import DomainError, as_matrix, symmetrize
from .covkit import weighted_sq_norm
from .generators import LabeledBatch

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class OlsFit:
    W_hat: np.ndarray
    gram: np.ndarray
    rank: int
    min_eig: float

    @property
    def full_rank(self) -> bool:
        return self.rank == self.gram.shape[0]


def _pool(X, Y=None):
    """Flatten m x T x n trajectory arrays (or pass through 2-d data)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(-1, X.shape[-1])
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DomainError(f"covariates must be 2- or 3-dimensional, got shape {X.shape}")
    if Y is None:
        return X, None
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 3:
        Y = Y.reshape(-1, Y.shape[-1])
    elif Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.shape[0] != X.shape[0]:
        raise DomainError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    return X, Y


def solve_ols(X, Y, rank_rtol: float = RANK_RTOL) -> OlsFit:
    """``W_hat = Y^T X (X^T X)^{-1}``, or the minimum-norm solution if X^T X is singular.

    Singularity is judged on the gram spectrum: eigenvalues below
    ``rank_rtol * max eigenvalue`` are treated as zero.
    """
    X, Y = _pool(X, Y)
    if X.shape[0] < 1:
        raise DomainError("need at least one sample")
    gram = symmetrize(X.T @ X)
    XtY = X.T @ Y
    evals, evecs = np.linalg.eigh(gram)
    top = max(float(evals[-1]), 0.0)
    keep = evals > rank_rtol * top if top > 0 else np.zeros_like(evals, dtype=bool)
    rank = int(keep.sum())
    inv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
    W_hat = (inv @ XtY).T
    return OlsFit(W_hat=W_hat, gram=gram, rank=rank, min_eig=float(evals[0]))


def ols_fit(data: LabeledBatch) -> OlsFit:
    return solve_ols(data.batch.X, data.Y)


def risk(W_hat, W_star, Gamma) -> float:
    """Excess risk ``||W_hat - W_star||^2_Gamma`` in the average covariance ``Gamma``."""
    diff = np.atleast_2d(np.asarray(W_hat, float) - np.asarray(W_star, float))
    return weighted_sq_norm(diff, Gamma)


def end_risk(W_hat, W_star, Sigma) -> float:
    """Final-step risk, measured in the last-step covariance ``Sigma_{T'}``."""
    return risk(W_hat, W_star, Sigma)


def param_error(W_hat, W_star, norm: str = "frobenius") -> float:
    """Squared Frobenius or squared operator norm of ``W_hat - W_star``."""
    diff = np.atleast_2d(np.asarray(W_hat, float) - np.asarray(W_star, float))
    if norm == "frobenius":
        return float(np.sum(diff**2))
    if norm == "operator":
        return float(np.linalg.norm(diff, 2) ** 2)
    raise DomainError(f"unknown norm {norm!r}")


class TrajectoryOLS(RegressorMixin, BaseEstimator):
    """Least squares over pooled trajectory data.

    Accepts covariates as an (m, T, n) array of trajectories or an already
    pooled (N, n) matrix, with responses of matching leading shape. No
    intercept is fitted.

    Attributes
    ----------
    coef_ : ndarray of shape (p, n)
    gram_ : ndarray of shape (n, n)
    rank_ : int
    rank_deficient_ : bool
        True when the minimum-norm solution was used.
    """

    def __init__(self, rank_rtol: float = RANK_RTOL):
        self.rank_rtol = rank_rtol

    def fit(self, X, y):
        fit = solve_ols(X, y, rank_rtol=self.rank_rtol)
        self.coef_ = fit.W_hat
        self.gram_ = fit.gram
        self.rank_ = fit.rank
        self.min_eig_ = fit.min_eig
        self.n_features_in_ = fit.gram.shape[0]
        self.rank_deficient_ = not fit.full_rank
        self._single_output = np.asarray(y).ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=np.float64)
        lead = X.shape[:-1]
        if X.shape[-1] != self.n_features_in_:
            raise DomainError(f"expected {self.n_features_in_} features, got {X.shape[-1]}")
        out = X.reshape(-1, X.shape[-1]) @ self.coef_.T
        if self._single_output:
            return out[:, 0].reshape(lead)
        return out.reshape(*lead, -1)

    def risk(self, W_star, Gamma) -> float:
        check_is_fitted(self, "coef_")
        return risk(self.coef_, W_star, as_matrix(Gamma, "Gamma", square=True))

    def to_fit(self) -> OlsFit:
        check_is_fitted(self, "coef_")
        return OlsFit(self.coef_, self.gram_, self.rank_, self.min_eig_)
