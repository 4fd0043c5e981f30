"""
Priors, conditional samplers and the Gibbs loop.

One iteration runs, in order:

    (i)   regional coefficients, equation by equation
    (i-b) hierarchy variances v_j (conjugate inverse-Gamma update)
    (ii)  common mean mu
    (iii) national coefficients
    (iv)  factor loadings
    (v)   latent factors
    (vi)  log-volatility paths and their AR(1) parameters

Random numbers come from substreams keyed by ``(seed, iteration, step, unit)``
so that threaded and serial runs produce the same draws.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._linalg import draw_regression
from .model_core import (
    HierarchyParams,
    ModelDims,
    NationalCoefficients,
    PanelDataset,
    RegionCoefficients,
    national_design,
    region_design,
)
from .sv_factors import (
    SVProcessParams,
    sample_factors_path,
    sample_loadings,
    sample_volatility_paths,
)

logger = logging.getLogger(__name__)

STORE_FORMAT = "hgvar-posterior"
STORE_VERSION = 1


class SamplerError(RuntimeError):
    """A Gibbs step failed; the message names the iteration and step."""


@dataclass(frozen=True)
class PriorConfig:
    V0_scale: float = 10.0
    d0: float = 0.01
    d1: float = 0.01
    national_coef_var: float = 10.0
    loading_var: float = 100.0
    sv_mean_var: float = 100.0
    sv_sigma_shape: float = 0.5
    sv_sigma_rate: float = 0.5
    sv_rho_a: float = 25.0
    sv_rho_b: float = 5.0

    def __post_init__(self):
        bad = [f.name for f in fields(self) if not getattr(self, f.name) > 0]
        if bad:
            raise ValueError(f"prior hyperparameters must be positive: {bad}")


@dataclass(frozen=True)
class SamplerConfig:
    total_iterations: int = 10000
    burn_in: int = 5000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.total_iterations:
            raise ValueError("need 0 <= burn_in < total_iterations")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def retained(self) -> list[int]:
        return list(range(self.burn_in, self.total_iterations, self.thin))


@dataclass
class ParameterState:
    """One full draw of every model quantity.

    Latent paths cover the estimation sample ``t = max(P, Q), ..., T-1``.
    ``sv_params`` lists the F factor processes first, then the L
    idiosyncratic ones.
    """

    regions: list[RegionCoefficients]
    national: NationalCoefficients
    hierarchy: HierarchyParams
    loadings: np.ndarray
    factors: np.ndarray
    log_vol_factors: np.ndarray
    log_vol_idio: np.ndarray
    sv_params: list[SVProcessParams] = field(default_factory=list)

    def betas(self) -> np.ndarray:
        return np.stack([r.beta_vec for r in self.regions])

    def common_component(self) -> np.ndarray:
        """``Lambda f_t`` for every t, shape (T_eff, L)."""
        return self.factors @ self.loadings.T

    def theta_bar(self) -> np.ndarray:
        """Error covariance built from time-averaged variances."""
        Hbar = np.exp(self.log_vol_factors).mean(axis=0)
        Obar = np.exp(self.log_vol_idio).mean(axis=0)
        th = (self.loadings * Hbar) @ self.loadings.T + np.diag(Obar)
        return 0.5 * (th + th.T)

    def theta_at(self, t: int) -> np.ndarray:
        th = ((self.loadings * np.exp(self.log_vol_factors[t])) @ self.loadings.T
              + np.diag(np.exp(self.log_vol_idio[t])))
        return 0.5 * (th + th.T)

    def is_finite(self) -> bool:
        arrays = [self.betas(), self.national.block_matrix(True), self.hierarchy.mu,
                  self.hierarchy.v, self.loadings, self.factors,
                  self.log_vol_factors, self.log_vol_idio]
        ok = all(np.all(np.isfinite(a)) for a in arrays)
        return ok and all(np.isfinite([p.phi, p.rho, p.sigma2]).all()
                          for p in self.sv_params)


def substream(seed, *key) -> np.random.Generator:
    """Generator for the deterministic substream ``(seed, *key)``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# conditional samplers

def _draw_region(X, Yi, common, logvol, mu, v, rngs, k):
    """Draw all k equations of one region; returns the k x ncol block matrix."""
    mat = np.empty((k, X.shape[1]))
    for j in range(k):
        mat[j] = draw_regression(X, Yi[:, j] - common[:, j], np.exp(logvol[:, j]),
                                 mu[j::k], v[j::k], rngs[j])
    return mat


def sample_region_coeffs(state: ParameterState, data: PanelDataset, W, region: int,
                         rng) -> RegionCoefficients:
    """Draw region ``region``'s coefficients from their Gaussian conditional.

    ``rng`` is a Generator or a sequence of k Generators (one per equation).
    """
    rc = state.regions[region]
    k, P, Q = data.k, rc.P, rc.Q
    X, Yi = region_design(data.Y, data.Z, W, region, P, Q)
    rows = slice(data.ell + region * k, data.ell + (region + 1) * k)
    common = state.common_component()[:, rows]
    logvol = state.log_vol_idio[:, rows]
    rngs = rng if isinstance(rng, (list, tuple)) else [rng] * k
    mat = _draw_region(X, Yi, common, logvol, state.hierarchy.mu,
                       state.hierarchy.v, rngs, k)
    return RegionCoefficients.from_block_matrix(mat, P, Q)


def sample_common_mean(betas, v, prior: PriorConfig, rng) -> np.ndarray:
    """Draw ``mu`` given all regional vectors; prior ``N(0, V0_scale I)``."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    v = np.asarray(v, dtype=float)
    n = betas.shape[0] if betas.size else 0
    prec = 1.0 / prior.V0_scale + n / v
    mean = (betas.sum(axis=0) / v) / prec if n else np.zeros_like(v)
    return mean + rng.standard_normal(v.shape[0]) / np.sqrt(prec)


def sample_common_variances(betas, mu, prior: PriorConfig, rng) -> np.ndarray:
    """Draw ``v_j ~ IG(d0 + N/2, d1 + sum_i (beta_ij - mu_j)^2 / 2)``."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    mu = np.asarray(mu, dtype=float)
    shape, scale = common_variance_posterior(betas, mu, prior)
    return scale / rng.gamma(shape, size=mu.shape[0])


def common_variance_posterior(betas, mu, prior: PriorConfig):
    """Inverse-Gamma (shape, scale) of the ``v_j`` conditional."""
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    shape = prior.d0 + 0.5 * betas.shape[0]
    scale = prior.d1 + 0.5 * np.sum((betas - mu) ** 2, axis=0)
    return shape, scale


def sample_national_coeffs(state: ParameterState, data: PanelDataset, rng,
                           prior: PriorConfig | None = None,
                           intercept: bool = False) -> NationalCoefficients:
    """Equation-by-equation draw of the national VAR coefficients."""
    prior = prior or PriorConfig()
    P, Q = state.national.D.shape[0], state.national.S.shape[0]
    X, Z = national_design(data.Y, data.Z, P, Q, intercept=intercept)
    ell = data.ell
    common = state.common_component()[:, :ell]
    logvol = state.log_vol_idio[:, :ell]
    rngs = rng if isinstance(rng, (list, tuple)) else [rng] * ell
    mat = np.empty((ell, X.shape[1]))
    for j in range(ell):
        mat[j] = draw_regression(X, Z[:, j] - common[:, j], np.exp(logvol[:, j]),
                                 0.0, prior.national_coef_var, rngs[j])
    return NationalCoefficients.from_block_matrix(mat, P, Q, with_intercept=intercept)


# ---------------------------------------------------------------------------
# residuals and initialization

class _Designs:
    """Design matrices cached for one dataset."""

    def __init__(self, data, W, dims, intercept):
        self.region = [region_design(data.Y, data.Z, W, i, dims.P, dims.Q)
                       for i in range(dims.N)]
        self.national = national_design(data.Y, data.Z, dims.P, dims.Q, intercept)

    def residuals(self, state, dims, intercept) -> np.ndarray:
        Xn, Zn = self.national
        parts = [Zn - Xn @ state.national.block_matrix(intercept).T]
        for (X, Yi), rc in zip(self.region, state.regions):
            parts.append(Yi - X @ rc.block_matrix().T)
        return np.hstack(parts)


def _ols(X, y, ridge=1e-6):
    XtX = X.T @ X
    XtX[np.diag_indices_from(XtX)] += ridge * max(np.trace(XtX) / len(XtX), 1.0)
    return np.linalg.solve(XtX, X.T @ y)


def initial_state(data: PanelDataset, W, dims: ModelDims,
                  intercept: bool = False) -> ParameterState:
    """Starting values from least squares and principal components."""
    des = _Designs(data, W, dims, intercept)
    regions = [RegionCoefficients.from_block_matrix(_ols(X, Yi).T, dims.P, dims.Q)
               for X, Yi in des.region]
    Xn, Zn = des.national
    national = NationalCoefficients.from_block_matrix(
        _ols(Xn, Zn).T, dims.P, dims.Q, with_intercept=intercept)
    betas = np.stack([r.beta_vec for r in regions])
    v = np.maximum(betas.var(axis=0), 1e-4) if dims.N > 1 else np.full(dims.M, 0.1)
    hier = HierarchyParams(mu=betas.mean(axis=0), v=v)
    T, L, F = dims.T_eff, dims.L, dims.F
    state = ParameterState(regions, national, hier, np.zeros((L, F)),
                           np.zeros((T, F)), np.zeros((T, F)), np.zeros((T, L)))
    eps = des.residuals(state, dims, intercept)
    eps_c = eps - eps.mean(axis=0)
    if F:
        U, s, Vt = np.linalg.svd(eps_c, full_matrices=False)
        f = U[:, :F] * np.sqrt(T)
        state.factors = f
        state.loadings = (Vt[:F].T * s[:F]) / np.sqrt(T)
    idio = eps - state.common_component()
    level = np.log(np.maximum(idio.var(axis=0), 1e-8))
    state.log_vol_idio = np.tile(level, (T, 1))
    state.sv_params = ([SVProcessParams(0.0, 0.9, 0.1) for _ in range(F)]
                       + [SVProcessParams(float(lv), 0.9, 0.1) for lv in level])
    return state


# ---------------------------------------------------------------------------
# posterior store

STEP_LABELS = ("region_coeffs", "hierarchy_variances", "common_mean",
               "national_coeffs", "loadings", "factors", "volatilities")


@dataclass
class PosteriorStore:
    """Retained draws plus the provenance needed to reproduce them.

    On disk: one UTF-8 JSON header line, then one little-endian float64 record
    per draw. Each record concatenates the blocks listed in
    ``header["layout"]`` in order, each flattened in C order:

    ``beta (N, M)``, ``national (ell, cols)``, ``mu (M,)``, ``v (M,)``,
    ``loadings (L, F)``, ``factors (T_eff, F)``, ``log_vol_factors (T_eff, F)``,
    ``log_vol_idio (T_eff, L)``, ``sv_phi (F+L,)``, ``sv_rho (F+L,)``,
    ``sv_sigma2 (F+L,)``.
    """

    dims: ModelDims
    prior: PriorConfig
    sampler: SamplerConfig
    draws: list[ParameterState] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    national_intercept: bool = False
    labels: list = field(default_factory=list)
    W: np.ndarray | None = None

    def __len__(self):
        return len(self.draws)

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        d = self.dims
        ncol = d.P * d.ell + d.Q * d.k + int(self.national_intercept)
        S = d.F + d.L
        return [("beta", (d.N, d.M)), ("national", (d.ell, ncol)), ("mu", (d.M,)),
                ("v", (d.M,)), ("loadings", (d.L, d.F)), ("factors", (d.T_eff, d.F)),
                ("log_vol_factors", (d.T_eff, d.F)), ("log_vol_idio", (d.T_eff, d.L)),
                ("sv_phi", (S,)), ("sv_rho", (S,)), ("sv_sigma2", (S,))]

    def stack(self, name: str) -> np.ndarray:
        """Array of one parameter block across draws."""
        return np.stack([self._blocks(s)[name] for s in self.draws])

    def _blocks(self, s: ParameterState) -> dict:
        return {
            "beta": s.betas(),
            "national": s.national.block_matrix(self.national_intercept),
            "mu": s.hierarchy.mu, "v": s.hierarchy.v,
            "loadings": s.loadings, "factors": s.factors,
            "log_vol_factors": s.log_vol_factors, "log_vol_idio": s.log_vol_idio,
            "sv_phi": np.array([p.phi for p in s.sv_params]),
            "sv_rho": np.array([p.rho for p in s.sv_params]),
            "sv_sigma2": np.array([p.sigma2 for p in s.sv_params]),
        }

    def header(self) -> dict:
        return {
            "format": STORE_FORMAT,
            "version": STORE_VERSION,
            "dims": asdict(self.dims),
            "prior": asdict(self.prior),
            "sampler": asdict(self.sampler),
            "seed": self.sampler.seed,
            "national_intercept": self.national_intercept,
            "labels": [list(x) for x in self.labels],
            "W": None if self.W is None else np.asarray(self.W).tolist(),
            "iterations": list(self.iterations),
            "layout": [[name, list(shape)] for name, shape in self.layout()],
            "dtype": "<f8",
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8") + b"\n"
        names = [name for name, _ in self.layout()]
        body = b"".join(
            np.concatenate([np.ravel(self._blocks(s)[n]) for n in names])
            .astype("<f8").tobytes()
            for s in self.draws)
        return head + body

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> PosteriorStore:
        nl = raw.index(b"\n")
        head = json.loads(raw[:nl].decode("utf-8"))
        if head.get("format") != STORE_FORMAT:
            raise ValueError("not a posterior store file")
        dims = ModelDims(**head["dims"])
        store = cls(dims=dims, prior=PriorConfig(**head["prior"]),
                    sampler=SamplerConfig(**head["sampler"]),
                    iterations=list(head["iterations"]),
                    national_intercept=head["national_intercept"],
                    labels=[tuple(x) for x in head["labels"]],
                    W=None if head.get("W") is None else np.array(head["W"]))
        layout = [(n, tuple(s)) for n, s in head["layout"]]
        sizes = [int(np.prod(s)) for _, s in layout]
        data = np.frombuffer(raw[nl + 1:], dtype="<f8")
        rec = sum(sizes)
        n_draws = len(store.iterations)
        if data.size != rec * n_draws:
            raise ValueError("posterior store is truncated or corrupt")
        data = data.reshape(n_draws, rec)
        for row in data:
            blocks, pos = {}, 0
            for (name, shape), size in zip(layout, sizes):
                blocks[name] = row[pos:pos + size].reshape(shape).copy()
                pos += size
            store.draws.append(store._state_from_blocks(blocks))
        return store

    @classmethod
    def load(cls, path) -> PosteriorStore:
        return cls.from_bytes(Path(path).read_bytes())

    def _state_from_blocks(self, b) -> ParameterState:
        d = self.dims
        regions = [RegionCoefficients.from_vec(row, d) for row in b["beta"]]
        national = NationalCoefficients.from_block_matrix(
            b["national"], d.P, d.Q, with_intercept=self.national_intercept)
        sv = [SVProcessParams(float(p), float(r), float(s))
              for p, r, s in zip(b["sv_phi"], b["sv_rho"], b["sv_sigma2"])]
        return ParameterState(regions, national, HierarchyParams(b["mu"], b["v"]),
                              b["loadings"], b["factors"], b["log_vol_factors"],
                              b["log_vol_idio"], sv)


# ---------------------------------------------------------------------------
# Gibbs loop

def gibbs_step(state: ParameterState, data: PanelDataset, W, dims: ModelDims,
               prior: PriorConfig, seed: int, it: int, designs: _Designs,
               intercept=False, pool=None) -> ParameterState:
    """Run steps (i)-(vi) once and return the updated state."""
    N, k, ell, F = dims.N, dims.k, dims.ell, dims.F
    step = 0
    try:
        common = state.common_component()
        hier = state.hierarchy

        def region_job(i):
            X, Yi = designs.region[i]
            rows = slice(ell + i * k, ell + (i + 1) * k)
            rngs = [substream(seed, it, 0, i, j) for j in range(k)]
            mat = _draw_region(X, Yi, common[:, rows], state.log_vol_idio[:, rows],
                               hier.mu, hier.v, rngs, k)
            return RegionCoefficients.from_block_matrix(mat, dims.P, dims.Q)

        jobs = range(N)
        state.regions = list(pool.map(region_job, jobs) if pool else map(region_job, jobs))
        betas = state.betas()

        step = 1
        v = sample_common_variances(betas, hier.mu, prior, substream(seed, it, 1))
        step = 2
        mu = sample_common_mean(betas, v, prior, substream(seed, it, 2))
        state.hierarchy = HierarchyParams(mu=mu, v=v)

        step = 3
        Xn, Zn = designs.national
        mat = np.empty((ell, Xn.shape[1]))
        for j in range(ell):
            mat[j] = draw_regression(Xn, Zn[:, j] - common[:, j],
                                     np.exp(state.log_vol_idio[:, j]), 0.0,
                                     prior.national_coef_var, substream(seed, it, 3, j))
        state.national = NationalCoefficients.from_block_matrix(
            mat, dims.P, dims.Q, with_intercept=intercept)

        eps = designs.residuals(state, dims, intercept)
        if F:
            step = 4
            state.loadings = sample_loadings(eps, state.factors, state.log_vol_idio,
                                             prior, substream(seed, it, 4))
            step = 5
            state.factors = sample_factors_path(state, eps, substream(seed, it, 5))

        step = 6
        idio = eps - state.common_component()
        series = np.vstack([state.factors.T, idio.T])
        paths = np.vstack([state.log_vol_factors.T, state.log_vol_idio.T])
        new_paths, new_params = sample_volatility_paths(
            series, paths, state.sv_params, prior, substream(seed, it, 6))
        state.log_vol_factors = new_paths[:F].T.copy()
        state.log_vol_idio = new_paths[F:].T.copy()
        state.sv_params = new_params
    except Exception as exc:
        raise SamplerError(f"iteration {it}, step {STEP_LABELS[step]}: {exc}") from exc
    if not state.is_finite():
        raise SamplerError(f"iteration {it}, step {STEP_LABELS[step]}: "
                           "non-finite parameter values")
    return state


def _copy_state(s: ParameterState) -> ParameterState:
    return ParameterState(
        regions=list(s.regions), national=s.national, hierarchy=s.hierarchy,
        loadings=s.loadings.copy(), factors=s.factors.copy(),
        log_vol_factors=s.log_vol_factors.copy(), log_vol_idio=s.log_vol_idio.copy(),
        sv_params=list(s.sv_params))


def run_gibbs(data: PanelDataset, W, prior: PriorConfig | None = None,
              sampler: SamplerConfig | None = None, P: int = 1, Q: int = 1,
              F: int = 1, threads: int = 1, national_intercept: bool = False,
              progress=None) -> PosteriorStore:
    """Run the full sampler and return the retained draws.

    Parameters
    ----------
    data : PanelDataset
        Transformed panel; ``Z[:, 0]`` is the uncertainty index.
    W : WeightMatrix or ndarray
    prior, sampler : configs, defaults as documented on the dataclasses.
    P, Q, F : lag orders and number of factors.
    threads : int
        Worker threads for the per-region step. Results do not depend on it.
    national_intercept : bool
        Add an intercept to the national VAR (off by default).
    progress : callable, optional
        Called as ``progress(iteration)`` after every iteration.
    """
    prior = prior or PriorConfig()
    sampler = sampler or SamplerConfig()
    dims = data.dims(P=P, Q=Q, F=F)
    designs = _Designs(data, W, dims, national_intercept)
    state = initial_state(data, W, dims, intercept=national_intercept)
    store = PosteriorStore(dims=dims, prior=prior, sampler=sampler,
                           national_intercept=national_intercept,
                           labels=data.global_labels(),
                           W=np.array(getattr(W, "W", W), dtype=float))
    keep = set(sampler.retained())
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for it in range(sampler.total_iterations):
            state = gibbs_step(state, data, W, dims, prior, sampler.seed, it, designs,
                               intercept=national_intercept, pool=pool)
            if it in keep:
                store.draws.append(_copy_state(state))
                store.iterations.append(it)
            if progress is not None:
                progress(it)
    finally:
        if pool is not None:
            pool.shutdown()
    logger.info("retained %d of %d draws", len(store), sampler.total_iterations)
    return store
