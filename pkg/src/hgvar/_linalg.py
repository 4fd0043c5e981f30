"""Small numerical helpers shared by the conditional samplers."""
from __future__ import annotations

import numpy as np
from scipy import linalg


class NumericalError(RuntimeError):
    """A factorization failed even after jittering."""


def chol_jitter(A, what="matrix"):
    """Lower Cholesky factor of a symmetric PD matrix.

    Falls back once to ``A + 1e-8 * trace(A)/dim * I`` before giving up.
    """
    A = 0.5 * (A + A.T)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    dim = A.shape[0]
    jitter = 1e-8 * max(np.trace(A), 0.0) / dim
    try:
        return np.linalg.cholesky(A + jitter * np.eye(dim))
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} is not positive definite after jitter") from None


def regression_moments(X, y, noise_var, prior_mean, prior_var):
    """Gaussian conditional posterior of a linear regression.

    The model is ``y_t = X_t b + e_t`` with ``e_t ~ N(0, noise_var_t)`` and
    independent priors ``b_j ~ N(prior_mean_j, prior_var_j)``.

    Returns
    -------
    mean : ndarray
    chol_prec : ndarray
        Lower Cholesky factor ``R`` of the posterior precision, so that
        ``cov = inv(R R')``.
    """
    w = 1.0 / np.asarray(noise_var, dtype=float)
    prior_var = np.broadcast_to(np.asarray(prior_var, dtype=float), (X.shape[1],))
    prior_mean = np.broadcast_to(np.asarray(prior_mean, dtype=float), (X.shape[1],))
    Xw = X * w[:, None]
    prec = X.T @ Xw
    prec[np.diag_indices_from(prec)] += 1.0 / prior_var
    rhs = Xw.T @ y + prior_mean / prior_var
    R = chol_jitter(prec, "posterior precision")
    mean = linalg.cho_solve((R, True), rhs)
    return mean, R


def draw_from_precision(mean, chol_prec, rng):
    """Draw ``N(mean, inv(R R'))`` given the lower factor ``R``."""
    z = rng.standard_normal(mean.shape[0])
    return mean + linalg.solve_triangular(chol_prec, z, lower=True, trans="T")


def draw_regression(X, y, noise_var, prior_mean, prior_var, rng):
    mean, R = regression_moments(X, y, noise_var, prior_mean, prior_var)
    return draw_from_precision(mean, R, rng)
