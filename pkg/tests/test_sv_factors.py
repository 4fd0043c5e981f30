import numpy as np
import pytest
from scipy import special

from hgvar.model_core import assemble_theta
from hgvar.priors_mcmc import PriorConfig
from hgvar.sv_factors import (
    MIX_MEAN,
    MIX_PROB,
    MIX_VAR,
    SVProcessParams,
    _ffbs,
    draw_mixture_indicators,
    factor_conditional,
    factor_conditionals,
    sample_factors_path,
    sample_loadings,
)

from conftest import cov_z, mc_z
from oracles import factor_formula_max_error, precision_form, simulate_sv, sv_posterior_means


class ZeroRNG:
    def standard_normal(self, size=None):
        return np.zeros(size)


class _State:
    def __init__(self, loadings, h, omega):
        self.loadings, self.log_vol_factors, self.log_vol_idio = loadings, h, omega


# --- factor conditional ----------------------------------------------------

def test_factor_conditional_without_loadings():
    H = np.array([0.7, 1.9])
    fc = factor_conditional(np.zeros((4, 2)), H, np.eye(4), np.ones(4))
    np.testing.assert_array_equal(fc.mean, 0.0)
    np.testing.assert_allclose(fc.covariance, np.diag(H), atol=1e-15)


def test_factor_conditional_scalar_case():
    fc = factor_conditional(np.ones((1, 1)), [1.0], [[2.0]], [0.8])
    assert fc.mean[0] == pytest.approx(0.4, abs=1e-15)
    assert fc.covariance[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_factor_conditional_precision_form():
    rng = np.random.default_rng(11)
    Lam = rng.normal(size=(6, 2))
    h, om, eps = rng.normal(size=2), rng.normal(size=6), rng.normal(size=6)
    fc = factor_conditional(Lam, np.exp(h), assemble_theta(Lam, h, om), eps)
    mean, cov = precision_form(Lam, np.exp(h), np.exp(om), eps)
    np.testing.assert_allclose(fc.mean, mean, atol=1e-10)
    np.testing.assert_allclose(fc.covariance, cov, atol=1e-10)


def test_factor_conditional_random_instances():
    assert factor_formula_max_error(100, seed=1) < 1e-10


def test_batched_conditionals_match_single():
    rng = np.random.default_rng(12)
    T, L, F = 5, 4, 2
    Lam = rng.normal(size=(L, F))
    h, om, eps = rng.normal(size=(T, F)), rng.normal(size=(T, L)), rng.normal(size=(T, L))
    means, covs = factor_conditionals(Lam, h, om, eps)
    for t in range(T):
        fc = factor_conditional(Lam, np.exp(h[t]), assemble_theta(Lam, h[t], om[t]), eps[t])
        np.testing.assert_allclose(means[t], fc.mean, atol=1e-12)
        np.testing.assert_allclose(covs[t], fc.covariance, atol=1e-12)


# --- factor path -----------------------------------------------------------

def test_factor_path_white_noise_without_loadings():
    T = 20_000
    rng = np.random.default_rng(13)
    h = np.full((T, 1), np.log(2.0))
    state = _State(np.zeros((3, 1)), h, np.zeros((T, 3)))
    f = sample_factors_path(state, rng.normal(size=(T, 3)), rng)[:, 0]
    assert abs(np.var(f) - 2.0) < 3 * 2.0 * np.sqrt(2 / T)
    lag1 = np.corrcoef(f[1:], f[:-1])[0, 1]
    assert abs(lag1) < 3 / np.sqrt(T)


def test_factor_path_zero_noise_gives_means():
    rng = np.random.default_rng(14)
    T, L, F = 6, 5, 2
    state = _State(rng.normal(size=(L, F)), rng.normal(size=(T, F)), rng.normal(size=(T, L)))
    eps = rng.normal(size=(T, L))
    means, _ = factor_conditionals(state.loadings, state.log_vol_factors, state.log_vol_idio, eps)
    np.testing.assert_array_equal(sample_factors_path(state, eps, ZeroRNG()), means)


def test_factor_path_moments():
    rng = np.random.default_rng(15)
    n, L, F = 100_000, 5, 2
    Lam = rng.normal(size=(L, F))
    h, om, eps = rng.normal(size=F), rng.normal(size=L), rng.normal(size=L)
    state = _State(Lam, np.tile(h, (n, 1)), np.tile(om, (n, 1)))
    draws = sample_factors_path(state, np.tile(eps, (n, 1)), rng)
    mean, cov = precision_form(Lam, np.exp(h), np.exp(om), eps)
    assert mc_z(draws, mean).max() < 3
    assert cov_z(draws, cov).max() < 3


# --- loadings --------------------------------------------------------------

def test_loadings_without_information_draw_prior():
    rng = np.random.default_rng(16)
    T, L, F = 10, 2, 1
    prior = PriorConfig()
    draws = np.array([sample_loadings(rng.normal(size=(T, L)), np.zeros((T, F)),
                                      np.zeros((T, L)), prior, rng)[:, 0]
                      for _ in range(20_000)])
    assert mc_z(draws, np.zeros(L)).max() < 3
    assert cov_z(draws, prior.loading_var * np.eye(L)).max() < 3


def test_loadings_diffuse_prior_is_least_squares():
    rng = np.random.default_rng(17)
    T, L, F = 50, 3, 2
    f, eps = rng.normal(size=(T, F)), rng.normal(size=(T, L))
    got = sample_loadings(eps, f, np.full((T, L), 0.7), PriorConfig(loading_var=1e14),
                          ZeroRNG())
    ols = np.linalg.solve(f.T @ f, f.T @ eps).T
    np.testing.assert_allclose(got, ols, atol=1e-6)


# --- stochastic volatility --------------------------------------------------

def test_mixture_matches_log_chi_square_moments():
    assert MIX_PROB.sum() == pytest.approx(1.0, abs=1e-4)
    mean = MIX_PROB @ MIX_MEAN
    var = MIX_PROB @ (MIX_VAR + MIX_MEAN ** 2) - mean ** 2
    assert mean == pytest.approx(special.digamma(0.5) + np.log(2), abs=1e-3)
    assert var == pytest.approx(np.pi ** 2 / 2, abs=1e-2)


def test_mixture_indicators_in_range():
    rng = np.random.default_rng(18)
    comp = draw_mixture_indicators(rng.normal(size=(3, 50)), np.zeros((3, 50)), rng)
    assert comp.min() >= 0 and comp.max() < len(MIX_PROB)


def test_ffbs_matches_gaussian_smoother():
    # the sampler is affine in its standard normals: h = m + A z, so m and
    # A A' can be read off exactly and compared with joint-Gaussian conditioning
    rng = np.random.default_rng(19)
    T, phi, rho, q = 8, 0.3, 0.8, 0.2
    y = rng.normal(size=T)
    obs = rng.uniform(0.2, 2.0, size=T)
    idx = np.arange(T)
    prior_cov = q / (1 - rho ** 2) * rho ** np.abs(idx[:, None] - idx[None, :])
    prior_prec = np.linalg.inv(prior_cov)
    cov = np.linalg.inv(prior_prec + np.diag(1 / obs))
    mean = cov @ (prior_prec @ np.full(T, phi) + y / obs)
    z = np.vstack([np.zeros(T), np.eye(T)])
    n = z.shape[0]
    out = _ffbs(np.tile(y, (n, 1)), np.tile(obs, (n, 1)), np.full(n, phi),
                np.full(n, rho), np.full(n, q), z)
    A = (out[1:] - out[0]).T
    np.testing.assert_allclose(out[0], mean, atol=1e-10)
    np.testing.assert_allclose(A @ A.T, cov, atol=1e-10)


def test_sv_recovers_constant_volatility():
    y = np.exp(0.2) * np.random.default_rng(20).normal(size=2000)
    means, _ = sv_posterior_means(y, sweeps=2000, burn=500, seed=1)
    assert abs(means[0] - 0.4) < 0.25


def test_sv_recovers_persistence():
    y = simulate_sv(3000, 0.4, 0.95, 0.04, seed=1)
    means, _ = sv_posterior_means(y, sweeps=3000, burn=1000, seed=2)
    assert 0.85 <= means[1] <= 0.99
    assert abs(means[0] - 0.4) < 0.25


def test_sv_path_collapses_as_sigma_prior_tightens():
    y = np.exp(0.2) * np.random.default_rng(21).normal(size=500)
    devs = []
    for rate in (0.5, 50.0, 5000.0, 500000.0):
        prior = PriorConfig(sv_sigma_rate=rate)
        devs.append(sv_posterior_means(y, sweeps=600, burn=200, seed=3, prior=prior,
                                       fix_rho=0.0)[1])
    assert all(a > b for a, b in zip(devs, devs[1:]))


def test_sv_fixed_rho_is_kept():
    y = simulate_sv(300, 0.0, 0.9, 0.05, seed=4)
    from hgvar.sv_factors import sample_volatility_path
    _, p = sample_volatility_path(y, SVProcessParams(0.0, 0.5, 0.1), None,
                                  np.random.default_rng(0), fix_rho=0.7)
    assert p.rho == 0.7


def test_sv_params_validation():
    with pytest.raises(ValueError):
        SVProcessParams(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        SVProcessParams(0.0, 0.5, 0.0)
