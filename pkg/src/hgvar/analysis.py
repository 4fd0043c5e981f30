"""
Synthetic data generation and the response-on-covariates regression.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model_core import (
    HierarchyParams,
    ModelDims,
    NationalCoefficients,
    PanelDataset,
    RegionCoefficients,
    stack_global_system,
)
from .priors_mcmc import ParameterState
from .sv_factors import SVProcessParams

TABLE1_COVARIATES = ("agric", "constr", "manu", "dir", "bussum")


class UnstableSystemError(ValueError):
    pass


class RankDeficientError(ValueError):
    pass


# ---------------------------------------------------------------------------
# synthetic data

def random_truth(dims: ModelDims, W, seed: int = 0, v_scale: float = 0.003,
                 idio_level: float = -2.0, max_tries: int = 200) -> ParameterState:
    """Draw a stable set of generating parameters.

    Every hierarchy mean lies in [-0.5, 0.5]; regional vectors scatter around
    it with variance ``v_scale``. Idiosyncratic log-variances fluctuate around
    ``idio_level`` (factor log-variances around -1). Latent paths are left
    empty (length 0); ``synth_generate`` fills them.
    """
    rng = np.random.default_rng(seed)
    k, ell, N, P, Q, F, L = dims.k, dims.ell, dims.N, dims.P, dims.Q, dims.F, dims.L
    for _ in range(max_tries):
        A = np.stack([(0.4 if p == 0 else 0.1) * np.eye(k)
                      + 0.05 * rng.standard_normal((k, k)) for p in range(P)])
        B = np.stack([0.1 * rng.standard_normal((k, k)) for _ in range(Q)])
        C = 0.05 * rng.standard_normal((k, ell))
        theta = 0.1 * rng.standard_normal(k)
        mu = RegionCoefficients(theta, A, B, C).beta_vec
        mu = np.clip(mu, -0.5, 0.5)
        v = np.full(dims.M, v_scale)
        regions = [RegionCoefficients.from_vec(mu + np.sqrt(v) * rng.standard_normal(dims.M),
                                               dims) for _ in range(N)]
        D = np.stack([(0.5 if p == 0 else 0.1) * np.eye(ell)
                      + 0.05 * rng.standard_normal((ell, ell)) for p in range(P)])
        S = np.stack([0.05 * rng.standard_normal((ell, k)) for _ in range(Q)])
        national = NationalCoefficients(D=D, S=S)
        system = stack_global_system(W, regions, national, dims)
        if system.spectral_radius() < 0.95:
            break
    else:
        raise UnstableSystemError("could not draw a stable system")
    loadings = 0.5 * rng.standard_normal((L, F))
    sv = ([SVProcessParams(-1.0, 0.9, 0.05) for _ in range(F)]
          + [SVProcessParams(idio_level, 0.9, 0.05) for _ in range(L)])
    empty = np.zeros((0, F))
    return ParameterState(regions, national, HierarchyParams(mu, v), loadings,
                          empty, empty.copy(), np.zeros((0, L)), sv)


def _simulate_sv(params, n, rng):
    out = np.empty((len(params), n))
    for s, p in enumerate(params):
        sd = np.sqrt(p.sigma2)
        h = p.phi + sd / np.sqrt(1 - p.rho ** 2) * rng.standard_normal()
        for t in range(n):
            if t:
                h = p.phi + p.rho * (h - p.phi) + sd * rng.standard_normal()
            out[s, t] = h
    return out


def synth_generate(dims: ModelDims, truth: ParameterState, W, seed: int = 0,
                   noise: bool = True, burn: int = 100, labels: dict | None = None):
    """Simulate the global model forward with factor-SV innovations.

    Returns ``(PanelDataset, record)``. ``record`` holds the generating
    parameters plus the simulated factors, log-variances and innovations for
    the last ``T`` periods (arrays indexed by calendar time ``0..T-1``).
    With ``noise=False`` all innovations are zero and the data follow the
    deterministic recursion from a random starting point.
    """
    system = stack_global_system(W, truth.regions, truth.national, dims)
    radius = system.spectral_radius()
    if radius >= 1:
        raise UnstableSystemError(f"spectral radius {radius:.4f} >= 1")
    rng = np.random.default_rng(seed)
    n, lags, F, L = dims.L, dims.lags, dims.F, dims.L
    total = dims.T + burn
    h = _simulate_sv(truth.sv_params[:F], total, rng).T
    omega = _simulate_sv(truth.sv_params[F:], total, rng).T
    f = np.exp(0.5 * h) * rng.standard_normal((total, F))
    eps = f @ truth.loadings.T + np.exp(0.5 * omega) * rng.standard_normal((total, L))
    if not noise:
        eps[:] = 0.0
    mean = np.linalg.solve(np.eye(n) - system.G.sum(axis=0), system.c)
    x = np.empty((total + lags, n))
    x[:lags] = mean + rng.standard_normal((lags, n))
    for t in range(total):
        acc = system.c + eps[t]
        for p in range(lags):
            acc = acc + system.G[p] @ x[lags + t - p - 1]
        x[lags + t] = acc
    x = x[lags + burn:]
    ell, N, k = dims.ell, dims.N, dims.k
    labels = labels or {}
    data = PanelDataset(
        Y=x[:, ell:].reshape(dims.T, N, k), Z=x[:, :ell],
        regions=labels.get("regions", []), region_vars=labels.get("region_vars", []),
        national_vars=labels.get("national_vars", []),
        periods=labels.get("periods", []),
        transform_log=[{"series": "*", "directive": "synthetic", "seed": seed}])
    keep = slice(burn, None)
    record = {
        "dims": dims, "seed": seed, "noise": noise, "spectral_radius": radius,
        "mu": truth.hierarchy.mu, "v": truth.hierarchy.v, "beta": truth.betas(),
        "national": truth.national.block_matrix(), "loadings": truth.loadings,
        "sv_phi": np.array([p.phi for p in truth.sv_params]),
        "sv_rho": np.array([p.rho for p in truth.sv_params]),
        "sv_sigma2": np.array([p.sigma2 for p in truth.sv_params]),
        "W": np.asarray(getattr(W, "W", W)),
        "factors": f[keep], "log_vol_factors": h[keep], "log_vol_idio": omega[keep],
        "innovations": eps[keep],
    }
    return data, record


# ---------------------------------------------------------------------------
# response regression

@dataclass
class ResponseRegressionInput:
    """Regional responses and time-averaged covariates (complete cases only)."""

    regions: list[str]
    response: np.ndarray
    covariates: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if self.covariates.shape[0] != self.response.shape[0]:
            self.covariates = self.covariates.T
        if not self.names:
            self.names = [f"x{j}" for j in range(self.covariates.shape[1])]
        keep = np.isfinite(self.response) & np.all(np.isfinite(self.covariates), axis=1)
        self.regions = [r for r, ok in zip(self.regions, keep) if ok]
        self.response = self.response[keep]
        self.covariates = self.covariates[keep]
        if self.response.shape[0] <= self.covariates.shape[1] + 1:
            raise ValueError("need more complete regions than covariates + 1")


@dataclass
class OLSResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    r2: float
    nobs: int

    @property
    def stars(self) -> list[str]:
        return [significance_stars(p) for p in self.pvalue]

    def rows(self) -> list[dict]:
        return [{"term": n, "coef": c, "se": s, "t": t, "p": p, "stars": st}
                for n, c, s, t, p, st in zip(self.names, self.coef, self.se,
                                             self.tstat, self.pvalue, self.stars)]


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _collinear_columns(X, names):
    bad, kept = [], []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(X[:, trial]) < len(trial):
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def ols_regress(inp: ResponseRegressionInput) -> OLSResult:
    """Least squares with an intercept and classical standard errors.

    Terms are reported as the covariates in input order followed by
    ``Intercept``.
    """
    y = inp.response
    X = np.column_stack([inp.covariates, np.ones_like(y)])
    names = list(inp.names) + ["Intercept"]
    n, p = X.shape
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientError(
            f"collinear design columns: {', '.join(_collinear_columns(X, names))}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = n - p
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    tstat = coef / se
    pvalue = 2 * stats.t.sf(np.abs(tstat), dof)
    tss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - (resid @ resid) / tss if tss > 0 else 1.0
    return OLSResult(names, coef, se, tstat, pvalue, float(r2), n)
