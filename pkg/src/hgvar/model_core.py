"""
Model equations and dimension bookkeeping for the hierarchical GVAR.

Regional blocks follow

    y_it = theta_i + sum_p A_ip y_{i,t-p} + sum_q B_iq y*_{i,t-q} + C_i z_{t-1} + e_it

with y*_it = sum_j w_ij y_jt, and the national block follows

    z_t = sum_p D_p z_{t-p} + sum_q S_q z*_{t-q} + u_t

with z*_t the plain cross-region average of the regional vectors. Every
cross-unit term enters lagged, so the joint process of
(z_t, y_1t, ..., y_Nt) is a finite-order VAR (see ``stack_global_system``).

Array conventions used throughout the package:

* ``Y`` has shape ``(T, N, k)``, ``Z`` has shape ``(T, ell)``.
* Estimation samples start at ``t = max(P, Q)`` (0-based), so residual arrays
  have ``T - max(P, Q)`` rows.
* The global ordering is national block first, then regions in input order.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Inputs have inconsistent shapes."""


class InsufficientDataError(ValueError):
    """Too few time points for the requested lag orders."""


@dataclass(frozen=True)
class ModelDims:
    """Model dimensions.

    Parameters
    ----------
    N : int
        Number of regions.
    k : int
        Variables per region.
    ell : int
        Number of national variables.
    P, Q : int
        Domestic and foreign lag orders.
    F : int
        Number of latent factors.
    T : int
        Number of time points in the (transformed) sample.
    """

    N: int
    k: int
    ell: int
    P: int = 1
    Q: int = 1
    F: int = 1
    T: int = 100

    def __post_init__(self):
        for name in ("N", "k", "ell", "P", "Q"):
            if int(getattr(self, name)) < 1:
                raise DimensionError(f"{name} must be >= 1")
        if self.F < 0:
            raise DimensionError("F must be >= 0")
        if self.T <= max(self.P, self.Q):
            raise InsufficientDataError(
                f"T={self.T} must exceed max(P, Q)={max(self.P, self.Q)}")
        if self.F > self.L:
            raise DimensionError(f"F={self.F} exceeds L={self.L}")

    @property
    def n_cols(self) -> int:
        """Regressors per regional equation, 1 + P k + Q k + ell."""
        return 1 + self.P * self.k + self.Q * self.k + self.ell

    @property
    def M(self) -> int:
        return self.k * self.n_cols

    @property
    def L(self) -> int:
        return self.k * self.N + self.ell

    @property
    def lags(self) -> int:
        return max(self.P, self.Q)

    @property
    def T_eff(self) -> int:
        return self.T - self.lags


@dataclass
class WeightMatrix:
    """Row-stochastic connectivity matrix with a zero diagonal.

    A single region is accepted as the degenerate ``[[0.0]]`` matrix; its
    foreign averages are identically zero.
    """

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionError(f"W must be square, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("W contains non-finite entries")
        if np.any(W < 0):
            raise ValueError("W has negative entries")
        if np.any(np.diag(W) != 0):
            raise ValueError("W must have an exactly zero diagonal")
        if W.shape[0] == 1:
            warnings.warn("single region: foreign averages are defined as zero",
                          stacklevel=2)
        elif np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("W rows must sum to one")
        self.W = W

    @property
    def N(self) -> int:
        return self.W.shape[0]


@dataclass
class PanelDataset:
    """Regional and national observations after transformation.

    ``Z[:, 0]`` must hold the uncertainty index; the identification scheme
    orders it first.
    """

    Y: np.ndarray
    Z: np.ndarray
    regions: list[str] = field(default_factory=list)
    region_vars: list[str] = field(default_factory=list)
    national_vars: list[str] = field(default_factory=list)
    periods: list[str] = field(default_factory=list)
    transform_log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Y.ndim != 3:
            raise DimensionError("Y must have shape (T, N, k)")
        if self.Z.ndim != 2 or self.Z.shape[0] != self.Y.shape[0]:
            raise DimensionError("Z must have shape (T, ell) matching Y")
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.Z))):
            raise ValueError("panel contains missing or non-finite values")
        T, N, k = self.Y.shape
        if not self.regions:
            self.regions = [f"r{i}" for i in range(N)]
        if not self.region_vars:
            self.region_vars = [f"y{j}" for j in range(k)]
        if not self.national_vars:
            self.national_vars = [f"z{j}" for j in range(self.Z.shape[1])]
        if (len(self.regions) != N or len(self.region_vars) != k
                or len(self.national_vars) != self.Z.shape[1]):
            raise DimensionError("label lists do not match array shapes")

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    @property
    def k(self) -> int:
        return self.Y.shape[2]

    @property
    def ell(self) -> int:
        return self.Z.shape[1]

    def dims(self, P=1, Q=1, F=1) -> ModelDims:
        return ModelDims(N=self.N, k=self.k, ell=self.ell, P=P, Q=Q, F=F, T=self.T)

    def global_labels(self) -> list[tuple[str, str]]:
        """(region, variable) labels in global stacking order."""
        labels = [("national", v) for v in self.national_vars]
        for r in self.regions:
            labels.extend((r, v) for v in self.region_vars)
        return labels


@dataclass
class RegionCoefficients:
    """Coefficients of one regional VARX equation block.

    ``beta_vec`` is the column-major flattening of the ``k x (1+Pk+Qk+ell)``
    block matrix ``[theta, A_1..A_P, B_1..B_Q, C]``, so the coefficients of
    equation ``j`` sit at ``beta_vec[j::k]``.
    """

    theta: np.ndarray
    A: np.ndarray  # (P, k, k)
    B: np.ndarray  # (Q, k, k)
    C: np.ndarray  # (k, ell)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        k = self.theta.shape[0]
        if (self.A.ndim != 3 or self.A.shape[1:] != (k, k)
                or self.B.ndim != 3 or self.B.shape[1:] != (k, k)
                or self.C.ndim != 2 or self.C.shape[0] != k):
            raise DimensionError("inconsistent regional coefficient shapes")

    @property
    def k(self) -> int:
        return self.theta.shape[0]

    @property
    def P(self) -> int:
        return self.A.shape[0]

    @property
    def Q(self) -> int:
        return self.B.shape[0]

    @property
    def ell(self) -> int:
        return self.C.shape[1]

    def block_matrix(self) -> np.ndarray:
        return np.hstack([self.theta[:, None], *self.A, *self.B, self.C])

    @property
    def beta_vec(self) -> np.ndarray:
        return self.block_matrix().reshape(-1, order="F")

    @classmethod
    def from_block_matrix(cls, mat, P, Q) -> RegionCoefficients:
        mat = np.asarray(mat, dtype=float)
        k = mat.shape[0]
        pos = 1
        A = np.stack([mat[:, pos + p * k: pos + (p + 1) * k] for p in range(P)])
        pos += P * k
        B = np.stack([mat[:, pos + q * k: pos + (q + 1) * k] for q in range(Q)])
        pos += Q * k
        return cls(theta=mat[:, 0].copy(), A=A, B=B, C=mat[:, pos:].copy())

    @classmethod
    def from_vec(cls, beta, dims: ModelDims) -> RegionCoefficients:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (dims.M,):
            raise DimensionError(f"beta_vec must have length M={dims.M}")
        mat = beta.reshape(dims.k, dims.n_cols, order="F")
        return cls.from_block_matrix(mat, dims.P, dims.Q)

    @classmethod
    def zeros(cls, dims: ModelDims) -> RegionCoefficients:
        return cls.from_vec(np.zeros(dims.M), dims)


@dataclass
class NationalCoefficients:
    """Coefficients of the national VAR; ``intercept`` is zero unless enabled."""

    D: np.ndarray  # (P, ell, ell)
    S: np.ndarray  # (Q, ell, k)
    intercept: np.ndarray | None = None

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        ell = self.D.shape[1]
        if self.D.ndim != 3 or self.D.shape[2] != ell:
            raise DimensionError("D must have shape (P, ell, ell)")
        if self.S.ndim != 3 or self.S.shape[1] != ell:
            raise DimensionError("S must have shape (Q, ell, k)")
        if self.intercept is None:
            self.intercept = np.zeros(ell)
        self.intercept = np.asarray(self.intercept, dtype=float)

    @property
    def ell(self) -> int:
        return self.D.shape[1]

    def block_matrix(self, with_intercept=False) -> np.ndarray:
        blocks = [*self.D, *self.S]
        if with_intercept:
            blocks.insert(0, self.intercept[:, None])
        return np.hstack(blocks)

    @classmethod
    def from_block_matrix(cls, mat, P, Q, with_intercept=False):
        mat = np.asarray(mat, dtype=float)
        ell = mat.shape[0]
        pos = 0
        icpt = None
        if with_intercept:
            icpt = mat[:, 0].copy()
            pos = 1
        D = np.stack([mat[:, pos + p * ell: pos + (p + 1) * ell] for p in range(P)])
        pos += P * ell
        k = (mat.shape[1] - pos) // Q
        S = np.stack([mat[:, pos + q * k: pos + (q + 1) * k] for q in range(Q)])
        return cls(D=D, S=S, intercept=icpt)

    @classmethod
    def zeros(cls, dims: ModelDims) -> NationalCoefficients:
        return cls(D=np.zeros((dims.P, dims.ell, dims.ell)),
                   S=np.zeros((dims.Q, dims.ell, dims.k)))


@dataclass
class HierarchyParams:
    """Common mean ``mu`` and diagonal variances ``v`` of the regional prior."""

    mu: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.mu.shape != self.v.shape:
            raise DimensionError("mu and v must have equal length")
        if np.any(self.v <= 0):
            raise ValueError("all hierarchy variances must be positive")


@dataclass
class GlobalSystem:
    """Stacked VAR ``x_t = c + sum_p G[p] x_{t-p} + e_t``.

    ``x_t = (z_t, y_1t, ..., y_Nt)``; ``G[p]`` multiplies lag ``p + 1``.
    """

    G: np.ndarray
    c: np.ndarray
    ordering: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def lags(self) -> int:
        return self.G.shape[0]

    def companion(self) -> np.ndarray:
        n, p = self.n, self.lags
        comp = np.zeros((n * p, n * p))
        comp[:n] = np.hstack(list(self.G))
        if p > 1:
            comp[n:, :-n] = np.eye(n * (p - 1))
        return comp

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.companion()))))


def _check_W(W, N):
    if isinstance(W, WeightMatrix):
        W = W.W
    W = np.asarray(W, dtype=float)
    if W.shape != (N, N):
        raise DimensionError(f"W has shape {W.shape}, expected {(N, N)}")
    return W


def compute_foreign_averages(Y, W) -> np.ndarray:
    """Weighted foreign averages ``y*[t, i] = sum_j W[i, j] y[t, j]``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 3:
        raise DimensionError("Y must have shape (T, N, k)")
    W = _check_W(W, Y.shape[1])
    return np.einsum("ij,tjk->tik", W, Y)


def compute_national_cross_averages(Y) -> np.ndarray:
    """Plain cross-region averages of the regional vectors, shape (T, k)."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 3 or Y.shape[1] < 1:
        raise DimensionError("Y must have shape (T, N, k) with N >= 1")
    return Y.mean(axis=1)


def _lagged(X, lag, start, stop):
    return X[start - lag: stop - lag]


def region_design(Y, Z, W, region, P, Q):
    """Design matrix and targets for one region.

    Returns ``(X, y)`` where ``X`` has columns
    ``[1, y_{t-1}..y_{t-P}, y*_{t-1}..y*_{t-Q}, z_{t-1}]`` and ``y`` holds
    ``y_it`` for ``t = max(P, Q), ..., T-1``.
    """
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    T = Y.shape[0]
    lags = max(P, Q)
    if T <= lags:
        raise InsufficientDataError(f"T={T} must exceed max(P, Q)={lags}")
    ystar = compute_foreign_averages(Y, W)[:, region]
    yi = Y[:, region]
    cols = [np.ones((T - lags, 1))]
    cols += [_lagged(yi, p, lags, T) for p in range(1, P + 1)]
    cols += [_lagged(ystar, q, lags, T) for q in range(1, Q + 1)]
    cols.append(_lagged(Z, 1, lags, T))
    return np.hstack(cols), yi[lags:]


def national_design(Y, Z, P, Q, intercept=False):
    """Design matrix ``[(1), z_{t-1}..z_{t-P}, z*_{t-1}..z*_{t-Q}]`` and targets."""
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    T = Z.shape[0]
    lags = max(P, Q)
    if T <= lags:
        raise InsufficientDataError(f"T={T} must exceed max(P, Q)={lags}")
    zstar = compute_national_cross_averages(Y)
    cols = [np.ones((T - lags, 1))] if intercept else []
    cols += [_lagged(Z, p, lags, T) for p in range(1, P + 1)]
    cols += [_lagged(zstar, q, lags, T) for q in range(1, Q + 1)]
    return np.hstack(cols), Z[lags:]


def region_residuals(data: PanelDataset, W, coeffs: RegionCoefficients,
                     region: int) -> np.ndarray:
    """Residuals ``e_it`` of one regional block, shape ``(T - max(P, Q), k)``."""
    if coeffs.k != data.k or coeffs.ell != data.ell:
        raise DimensionError("coefficients do not match the panel dimensions")
    X, y = region_design(data.Y, data.Z, W, region, coeffs.P, coeffs.Q)
    return y - X @ coeffs.block_matrix().T


def national_residuals(data: PanelDataset, coeffs: NationalCoefficients, Q=None,
                       intercept=False) -> np.ndarray:
    """Residuals ``u_t`` of the national VAR, shape ``(T - max(P, Q), ell)``."""
    P = coeffs.D.shape[0]
    Q = coeffs.S.shape[0] if Q is None else Q
    if coeffs.ell != data.ell or coeffs.S.shape[2] != data.k:
        raise DimensionError("coefficients do not match the panel dimensions")
    X, z = national_design(data.Y, data.Z, P, Q, intercept=intercept)
    return z - X @ coeffs.block_matrix(with_intercept=intercept).T


def assemble_theta(Lambda, h_t, omega_t) -> np.ndarray:
    """Error covariance ``Lambda diag(exp h) Lambda' + diag(exp omega)``."""
    Lambda = np.asarray(Lambda, dtype=float)
    h_t = np.atleast_1d(np.asarray(h_t, dtype=float))
    omega_t = np.atleast_1d(np.asarray(omega_t, dtype=float))
    if not (np.all(np.isfinite(Lambda)) and np.all(np.isfinite(h_t))
            and np.all(np.isfinite(omega_t))):
        raise ValueError("assemble_theta received non-finite input")
    L = omega_t.shape[0]
    if Lambda.size == 0:
        Lambda = Lambda.reshape(L, 0)
    if Lambda.shape != (L, h_t.shape[0]):
        raise DimensionError("Lambda must have shape (L, F)")
    theta = (Lambda * np.exp(h_t)) @ Lambda.T
    theta[np.diag_indices(L)] += np.exp(omega_t)
    return 0.5 * (theta + theta.T)


def stack_global_system(W, regions: list[RegionCoefficients],
                        national: NationalCoefficients,
                        dims: ModelDims, labels=None) -> GlobalSystem:
    """Stack all regional and national blocks into one VAR in levels."""
    N, k, ell = dims.N, dims.k, dims.ell
    W = _check_W(W, N)
    if len(regions) != N:
        raise DimensionError(f"expected {N} regional blocks, got {len(regions)}")
    n = ell + N * k
    lags = dims.lags
    G = np.zeros((lags, n, n))
    c = np.zeros(n)
    c[:ell] = national.intercept
    for p in range(dims.P):
        G[p, :ell, :ell] = national.D[p]
    for q in range(dims.Q):
        avg = national.S[q] / N
        for j in range(N):
            G[q, :ell, ell + j * k: ell + (j + 1) * k] += avg
    for i, rc in enumerate(regions):
        rows = slice(ell + i * k, ell + (i + 1) * k)
        c[rows] = rc.theta
        for p in range(dims.P):
            G[p, rows, rows] += rc.A[p]
        for q in range(dims.Q):
            for j in range(N):
                if W[i, j] != 0.0:
                    G[q, rows, ell + j * k: ell + (j + 1) * k] += W[i, j] * rc.B[q]
        G[0, rows, :ell] += rc.C
    return GlobalSystem(G=G, c=c, ordering=list(labels or []))
