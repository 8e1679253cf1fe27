"""Dense least-squares and binary-GLM kernels.

Every estimator in the package is assembled from the four fits in this
module. Solves go through QR/SVD factorizations (``numpy.linalg.lstsq``,
``numpy.linalg.qr``); normal equations are never formed explicitly because
the second-stage designs encountered downstream can be severely collinear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import (
    NonFiniteError,
    NoVariationError,
    RankDeficientError,
    SeparationError,
)

# Relative singular-value cutoff below which a design is treated as rank
# deficient.
RANK_TOL = 1e-10

# IRLS controls: max |coefficient change| declares convergence, the sup-norm
# bound declares separation/divergence.
GLM_TOL = 1e-8
GLM_MAX_ITER = 100
GLM_DIVERGENCE_BOUND = 1e3

_PROB_EPS = 1e-10


@dataclass(frozen=True)
class LinearFit:
    """Result of a least-squares fit.

    ``fitted + residuals`` reproduces the observed response elementwise, and
    for plain OLS the residuals are orthogonal to every design column.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray


@dataclass(frozen=True)
class GlmFit:
    """Result of a Bernoulli GLM fit.

    Fitted probabilities are clipped to the open interval (0, 1).
    """

    coefficients: np.ndarray
    fitted_probabilities: np.ndarray
    link: str
    converged: bool
    iterations: int


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _check_finite(*arrays):
    for arr in arrays:
        if not np.isfinite(arr).all():
            raise NonFiniteError("input contains NaN or infinite values")


def _offending_column(X):
    # Column most aligned with the null space, used to label rank errors.
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    return int(np.argmax(np.abs(vt[-1])))


def _lstsq(X, y):
    """Least squares with a rank check at RANK_TOL; returns coefficients."""
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=RANK_TOL)
    if rank < X.shape[1]:
        raise RankDeficientError(column=_offending_column(X))
    return coef


def ols_fit(X, y) -> LinearFit:
    """Ordinary least squares of ``y`` on the columns of ``X``.

    Parameters
    ----------
    X : ndarray, shape (n, p)
        Design matrix, intercept column included explicitly if wanted.
    y : ndarray, shape (n,)
        Response vector.

    Returns
    -------
    LinearFit
        Coefficients minimizing ``||y - X b||^2`` plus fitted values and
        residuals.

    Raises
    ------
    RankDeficientError
        If the smallest singular value of ``X`` is below ``RANK_TOL`` times
        the largest.
    NonFiniteError
        If any input entry is NaN or infinite.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if X.shape[0] < X.shape[1]:
        raise RankDeficientError(column=X.shape[0])
    coef = _lstsq(X, y)
    fitted = X @ coef
    return LinearFit(coefficients=coef, residuals=y - fitted, fitted=fitted)


def ridge_fit(X, y, lam, penalize_intercept=False, penalize=None) -> LinearFit:
    """Ridge regression via the augmented least-squares system.

    Minimizes ``||y - X b||^2 + lam * sum_j m_j b_j^2`` where ``m`` is the
    penalty mask. With ``lam = 0`` this is exactly ``ols_fit`` (same solve,
    bit for bit).

    Parameters
    ----------
    X, y : ndarray
        Design and response.
    lam : float
        Nonnegative penalty.
    penalize_intercept : bool
        When False (default), a leading all-ones column is left unpenalized.
    penalize : array of bool, optional
        Explicit per-column penalty mask; overrides ``penalize_intercept``.
        Used by the ridge second stage to leave control columns unpenalized.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if not np.isscalar(lam) or lam < 0 or not np.isfinite(lam):
        raise ValueError("lam must be a finite nonnegative scalar")
    if lam == 0:
        return ols_fit(X, y)

    n, p = X.shape
    if penalize is None:
        penalize = np.ones(p, dtype=bool)
        if not penalize_intercept and p > 0 and np.all(X[:, 0] == 1.0):
            penalize[0] = False
    else:
        penalize = np.asarray(penalize, dtype=bool)
        if penalize.shape != (p,):
            raise ValueError("penalize mask must have one entry per column")

    k = int(penalize.sum())
    aug = np.zeros((n + k, p))
    aug[:n] = X
    rows = np.arange(n, n + k)
    aug[rows, np.flatnonzero(penalize)] = np.sqrt(lam)
    y_aug = np.concatenate([y, np.zeros(k)])
    coef, _, rank, _ = np.linalg.lstsq(aug, y_aug, rcond=RANK_TOL)
    if rank < p:
        raise RankDeficientError(column=_offending_column(aug))
    fitted = X @ coef
    return LinearFit(coefficients=coef, residuals=y - fitted, fitted=fitted)


def _start_values(X, y, link):
    # Start IRLS from the intercept-only solution when column 0 is an
    # intercept; cuts 2-3 Newton steps on typical designs.
    beta = np.zeros(X.shape[1])
    if X.shape[1] and np.all(X[:, 0] == 1.0):
        mean = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        beta[0] = np.log(mean / (1 - mean)) if link == "logit" else norm.ppf(mean)
    return beta


def glm_fit(X, y, link="logit") -> GlmFit:
    """Bernoulli GLM by iteratively reweighted least squares.

    Parameters
    ----------
    X : ndarray, shape (n, p)
        Design matrix.
    y : ndarray, shape (n,)
        Binary response, entries in {0, 1}, both classes present.
    link : {"logit", "probit"}

    Raises
    ------
    NoVariationError
        If ``y`` is constant.
    SeparationError
        If the coefficient sup-norm exceeds the divergence bound before
        convergence.
    """
    if link not in ("logit", "probit"):
        raise ValueError(f"unknown link {link!r}")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("glm_fit requires a 0/1 response")
    if y.min() == y.max():
        raise NoVariationError("response is constant")

    beta = _start_values(X, y, link)
    converged = False
    iterations = 0
    for iterations in range(1, GLM_MAX_ITER + 1):
        eta = X @ beta
        if link == "logit":
            p = np.clip(expit(eta), _PROB_EPS, 1 - _PROB_EPS)
            w = p * (1 - p)
            z = eta + (y - p) / w
        else:
            p = np.clip(norm.cdf(eta), _PROB_EPS, 1 - _PROB_EPS)
            d = np.maximum(norm.pdf(eta), _PROB_EPS)
            w = d * d / (p * (1 - p))
            z = eta + (y - p) / d
        sw = np.sqrt(w)
        new_beta = _lstsq(X * sw[:, None], z * sw)
        step = np.max(np.abs(new_beta - beta))
        beta = new_beta
        if np.max(np.abs(beta)) > GLM_DIVERGENCE_BOUND:
            raise SeparationError()
        if step < GLM_TOL:
            converged = True
            break

    eta = X @ beta
    probs = expit(eta) if link == "logit" else norm.cdf(eta)
    probs = np.clip(probs, _PROB_EPS, 1 - _PROB_EPS)
    return GlmFit(
        coefficients=beta,
        fitted_probabilities=probs,
        link=link,
        converged=converged,
        iterations=iterations,
    )


def glm_predict(fit: GlmFit, X) -> np.ndarray:
    """Fitted probabilities for new rows under an existing GLM fit."""
    eta = _as_matrix(X) @ fit.coefficients
    probs = expit(eta) if fit.link == "logit" else norm.cdf(eta)
    return np.clip(probs, _PROB_EPS, 1 - _PROB_EPS)


def projection_matrix(Z) -> np.ndarray:
    """Orthogonal projector onto the column space of ``Z``.

    Computed as ``Q Q'`` from the thin QR factorization, which keeps the
    result symmetric and idempotent without inverting ``Z'Z``.
    """
    Z = _as_matrix(Z)
    _check_finite(Z)
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficientError(column=_offending_column(Z))
    Q, _ = np.linalg.qr(Z)
    return Q @ Q.T
