"""
Latent factors, loadings and stochastic-volatility paths.

The log-variance of every factor and idiosyncratic error follows

    h_t = phi + rho (h_{t-1} - phi) + sigma xi_t,   xi_t ~ N(0, 1),

with priors phi ~ N(0, B_phi), (rho + 1)/2 ~ Beta(a, b) and
sigma^2 ~ Gamma(shape, rate). Paths are drawn with the auxiliary mixture
sampler: log(e_t^2 + c) = h_t + log(xi_t^2), the log chi-square(1) term is
replaced by the 10-component normal mixture of Omori, Chib, Shephard and
Nakajima (2007), and the path is drawn by forward filtering / backward
sampling. Parameters are drawn in the centered parameterization by an
independence Metropolis-Hastings step and then re-drawn for (phi, sigma) in
the non-centered parameterization (ancillarity-sufficiency interweaving).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import linalg

from ._linalg import NumericalError, chol_jitter

# Omori et al. (2007), mixture approximation of log chi-square(1)
MIX_PROB = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
                     0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
MIX_MEAN = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
                     -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
MIX_VAR = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
                    0.98583, 1.57469, 2.54498, 4.16591, 7.33342])

LOG_OFFSET = 1e-10
MAX_RHO_ATTEMPTS = 100


@dataclass
class SVProcessParams:
    """Parameters of one AR(1) log-variance process."""

    phi: float
    rho: float
    sigma2: float

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass
class FactorConditional:
    """Gaussian full conditional of ``f_t``: mean and covariance."""

    mean: np.ndarray
    covariance: np.ndarray


def _default_prior(prior):
    if prior is None:
        from .priors_mcmc import PriorConfig
        prior = PriorConfig()
    return prior


# ---------------------------------------------------------------------------
# factors

def factor_conditional(Lambda, H_diag, Theta, eps) -> FactorConditional:
    """Conditional of ``f_t`` given ``eps_t``.

    Uses ``U = H Lambda' Theta^{-1}``, mean ``U eps`` and covariance
    ``H - U Theta U'``.
    """
    Lambda = np.asarray(Lambda, dtype=float)
    H = np.diag(np.asarray(H_diag, dtype=float))
    Theta = np.asarray(Theta, dtype=float)
    try:
        cf = linalg.cho_factor(Theta, lower=True)
    except linalg.LinAlgError:
        dim = Theta.shape[0]
        try:
            cf = linalg.cho_factor(Theta + 1e-8 * np.trace(Theta) / dim * np.eye(dim),
                                   lower=True)
        except linalg.LinAlgError:
            raise NumericalError("Theta_t is numerically singular") from None
    U = linalg.cho_solve(cf, Lambda @ H).T
    cov = H - U @ Theta @ U.T
    return FactorConditional(mean=U @ np.asarray(eps, dtype=float),
                             covariance=0.5 * (cov + cov.T))


def factor_conditionals(Lambda, h, omega, eps):
    """Batched ``factor_conditional`` over time.

    ``h`` is ``(T, F)``, ``omega`` and ``eps`` are ``(T, L)``. Returns means
    ``(T, F)`` and covariances ``(T, F, F)``.
    """
    Lambda = np.asarray(Lambda, dtype=float)
    Hd = np.exp(h)
    LH = Lambda[None, :, :] * Hd[:, None, :]                  # (T, L, F)
    Theta = LH @ Lambda.T[None]                              # (T, L, L)
    idx = np.arange(Lambda.shape[0])
    Theta[:, idx, idx] += np.exp(omega)
    try:
        Ut = np.linalg.solve(Theta, LH)                      # Theta^{-1} Lambda H
    except np.linalg.LinAlgError:
        raise NumericalError("Theta_t is numerically singular") from None
    U = np.swapaxes(Ut, 1, 2)                                # (T, F, L)
    means = np.einsum("tfl,tl->tf", U, eps)
    cov = -U @ Theta @ Ut
    fidx = np.arange(Lambda.shape[1])
    cov[:, fidx, fidx] += Hd
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return means, cov


def sample_factors_path(state, residuals, rng) -> np.ndarray:
    """Independent draw of ``f_t`` for every ``t`` from its conditional.

    ``state`` supplies ``loadings``, ``log_vol_factors`` and ``log_vol_idio``.
    """
    Lambda = state.loadings
    h = state.log_vol_factors
    T, F = h.shape
    if F == 0:
        return np.zeros((T, 0))
    means, cov = factor_conditionals(Lambda, h, state.log_vol_idio, residuals)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        chol = np.stack([chol_jitter(c, "factor covariance") for c in cov])
    z = rng.standard_normal((T, F))
    return means + np.einsum("tfg,tg->tf", chol, z)


def sample_loadings(residuals, factors, log_vol_idio, prior, rng) -> np.ndarray:
    """Row-by-row Gaussian draw of the loadings.

    Row ``r`` regresses ``eps_r,t`` on ``f_t`` with noise variance
    ``exp(omega_r,t)`` under independent ``N(0, loading_var)`` priors.
    """
    prior = _default_prior(prior)
    eps = np.asarray(residuals, dtype=float)
    f = np.asarray(factors, dtype=float)
    T, L = eps.shape
    F = f.shape[1]
    if F == 0:
        return np.zeros((L, 0))
    w = np.exp(-np.asarray(log_vol_idio, dtype=float))       # (T, L)
    prec = np.einsum("tf,tr,tg->rfg", f, w, f)
    prec[:, np.arange(F), np.arange(F)] += 1.0 / prior.loading_var
    rhs = np.einsum("tf,tr,tr->rf", f, w, eps)
    out = np.empty((L, F))
    z = rng.standard_normal((L, F))
    for r in range(L):
        R = chol_jitter(prec[r], "loading precision")
        mean = linalg.cho_solve((R, True), rhs[r])
        out[r] = mean + linalg.solve_triangular(R, z[r], lower=True, trans="T")
    return out


# ---------------------------------------------------------------------------
# stochastic volatility

@njit(cache=True)
def _ffbs(y, obs_var, phi, rho, sigma2, z):
    """Forward filter / backward sampler for a batch of AR(1) states.

    ``y[s, t] = h[s, t] + N(0, obs_var[s, t])``; ``z`` holds standard normals.
    """
    S, T = y.shape
    out = np.empty((S, T))
    m = np.empty(T)
    C = np.empty(T)
    for s in range(S):
        ph = phi[s]
        r = rho[s]
        q = sigma2[s]
        a = ph
        P = q / (1.0 - r * r)
        for t in range(T):
            K = P / (P + obs_var[s, t])
            m[t] = a + K * (y[s, t] - a)
            C[t] = (1.0 - K) * P
            a = ph + r * (m[t] - ph)
            P = r * r * C[t] + q
        h = m[T - 1] + np.sqrt(C[T - 1]) * z[s, T - 1]
        out[s, T - 1] = h
        for t in range(T - 2, -1, -1):
            Pn = r * r * C[t] + q
            g = C[t] * r / Pn
            mean = m[t] + g * (h - ph - r * (m[t] - ph))
            var = C[t] - g * g * Pn
            h = mean + np.sqrt(max(var, 0.0)) * z[s, t]
            out[s, t] = h
    return out


def draw_mixture_indicators(ystar, h, rng):
    """Draw mixture component indices given ``ystar = log(e^2 + c)`` and ``h``."""
    resid = ystar[..., None] - h[..., None] - MIX_MEAN
    logp = np.log(MIX_PROB) - 0.5 * np.log(MIX_VAR) - 0.5 * resid ** 2 / MIX_VAR
    logp -= logp.max(axis=-1, keepdims=True)
    p = np.exp(logp)
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(ystar.shape)[..., None] * cdf[..., -1:]
    return np.minimum((u > cdf).sum(axis=-1), len(MIX_PROB) - 1)


def _log_rho_prior(rho, prior):
    return ((prior.sv_rho_a - 1) * np.log1p(rho)
            + (prior.sv_rho_b - 1) * np.log1p(-rho))


def _log_sigma2_prior(sigma2, prior):
    return (prior.sv_sigma_shape - 1) * np.log(sigma2) - prior.sv_sigma_rate * sigma2


def _log_target_ratio(h0, phi, rho, sigma2, prior):
    """Log of target over auxiliary-prior proposal, up to a constant."""
    stat_var = sigma2 / (1.0 - rho * rho)
    out = -0.5 * np.log(stat_var) - 0.5 * (h0 - phi) ** 2 / stat_var
    out += -0.5 * phi ** 2 / prior.sv_mean_var
    out += _log_rho_prior(rho, prior) + _log_sigma2_prior(sigma2, prior)
    out += np.log(sigma2) - np.log1p(-rho)
    return out


def _draw_centered(h, params, prior, rng, fix_rho=None):
    """Independence MH draw of (phi, rho, sigma2) given the path ``h``.

    The proposal is the conjugate posterior of the regression
    ``h_t = gamma + rho h_{t-1} + sigma e_t`` (t >= 1) under the prior
    ``p(gamma, rho, sigma2) ∝ 1/sigma2``; ``gamma = phi (1 - rho)``.
    """
    phi0, rho0, s20 = params.phi, params.rho, params.sigma2
    n = h.shape[0] - 1
    if fix_rho is None:
        X = np.column_stack([np.ones(n), h[:-1]])
        target = h[1:]
    else:
        X = np.ones((n, 1))
        target = h[1:] - fix_rho * h[:-1]
    XtX = X.T @ X
    R = np.linalg.cholesky(XtX)
    bhat = linalg.cho_solve((R, True), X.T @ target)
    ssr = float(np.sum((target - X @ bhat) ** 2))
    shape = 0.5 * (n - X.shape[1])
    for _ in range(MAX_RHO_ATTEMPTS):
        s2 = (0.5 * ssr) / rng.gamma(shape)
        b = bhat + np.sqrt(s2) * linalg.solve_triangular(
            R, rng.standard_normal(X.shape[1]), lower=True, trans="T")
        rho = b[1] if fix_rho is None else fix_rho
        if abs(rho) < 1:
            break
    else:
        return params
    phi = b[0] / (1.0 - rho)
    log_acc = (_log_target_ratio(h[0], phi, rho, s2, prior)
               - _log_target_ratio(h[0], phi0, rho0, s20, prior))
    if np.log(rng.random()) < log_acc:
        return SVProcessParams(float(phi), float(rho), float(s2))
    return params


def _draw_noncentered(ytilde, obs_var, h, params, prior, rng):
    """Redraw (phi, sigma) given the standardized path.

    With ``sigma^2 ~ Gamma(1/2, rate)`` the signed ``sigma`` is
    ``N(0, 1/(2 rate))``, so (phi, sigma) has a Gaussian conditional.
    """
    sigma = np.sqrt(params.sigma2)
    htil = (h - params.phi) / sigma
    X = np.column_stack([np.ones_like(htil), htil])
    w = 1.0 / obs_var
    prec = (X.T * w) @ X
    prec[0, 0] += 1.0 / prior.sv_mean_var
    prec[1, 1] += 2.0 * prior.sv_sigma_rate
    R = chol_jitter(prec, "non-centered precision")
    mean = linalg.cho_solve((R, True), (X.T * w) @ ytilde)
    phi, sig = mean + linalg.solve_triangular(
        R, rng.standard_normal(2), lower=True, trans="T")
    if sig < 0:
        sig, htil = -sig, -htil
    if sig == 0.0:
        return h, params
    new = SVProcessParams(float(phi), params.rho, float(sig * sig))
    return phi + sig * htil, new


def init_sv(series):
    """Starting path and parameters from the data."""
    ystar = np.log(np.asarray(series, dtype=float) ** 2 + LOG_OFFSET)
    level = float(np.mean(ystar) + 1.2704)
    return np.full(ystar.shape, level), SVProcessParams(level, 0.9, 0.1)


def sample_volatility_paths(series, h, params, prior, rng, fix_rho=None):
    """One sweep for a batch of independent SV series.

    Parameters
    ----------
    series : ndarray, shape (S, T)
        Conditioning residuals (or factor draws), one row per process.
    h : ndarray, shape (S, T)
        Current log-variance paths.
    params : list of SVProcessParams
    prior : PriorConfig
    rng : numpy.random.Generator
    fix_rho : float, optional
        Hold the persistence at this value instead of sampling it.

    Returns
    -------
    (ndarray, list of SVProcessParams)
    """
    prior = _default_prior(prior)
    series = np.atleast_2d(np.asarray(series, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    S, T = series.shape
    if S == 0:
        return h.copy(), []
    if T < 4:
        raise ValueError("stochastic volatility needs at least 4 time points")
    ystar = np.log(series ** 2 + LOG_OFFSET)
    comp = draw_mixture_indicators(ystar, h, rng)
    ytilde = ystar - MIX_MEAN[comp]
    obs_var = MIX_VAR[comp]
    phi = np.array([p.phi for p in params])
    rho = np.array([p.rho if fix_rho is None else fix_rho for p in params])
    s2 = np.array([p.sigma2 for p in params])
    z = rng.standard_normal((S, T))
    new_h = _ffbs(ytilde, obs_var, phi, rho, s2, z)
    new_params = []
    interweave = prior.sv_sigma_shape == 0.5
    for s in range(S):
        p = params[s]
        if fix_rho is not None:
            p = SVProcessParams(p.phi, fix_rho, p.sigma2)
        p = _draw_centered(new_h[s], p, prior, rng, fix_rho=fix_rho)
        if interweave:
            new_h[s], p = _draw_noncentered(ytilde[s], obs_var[s], new_h[s], p, prior, rng)
        new_params.append(p)
    return new_h, new_params


def sample_volatility_path(series, params: SVProcessParams, prior=None, rng=None,
                           h=None, fix_rho=None):
    """Single-series convenience wrapper around ``sample_volatility_paths``.

    Returns the new log-variance path and parameter draw.
    """
    if rng is None:
        rng = np.random.default_rng()
    series = np.asarray(series, dtype=float)
    if h is None:
        h, _ = init_sv(series)
    paths, new = sample_volatility_paths(series[None], np.asarray(h)[None], [params],
                                         prior, rng, fix_rho=fix_rho)
    return paths[0], new[0]
