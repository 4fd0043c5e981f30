"""
Cholesky-identified impulse responses and variance decompositions.

The shocked variable is the first national variable (the uncertainty index),
which sits at global position 0. Each posterior draw is identified from the
covariance built with time-averaged variances (``ParameterState.theta_bar``)
unless a specific estimation-sample date is requested.

Quantiles use linear interpolation between order statistics
(``numpy.percentile(..., method="linear")``).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import NumericalError
from .model_core import GlobalSystem, stack_global_system

QUANTILES = (16.0, 50.0, 84.0)
EXPLOSIVE_RADIUS = 1.2


class ExplosiveSystemWarning(UserWarning):
    pass


@dataclass
class ShockDesign:
    """Recursive ordering and shock choice.

    ``ordering`` lists global variable indices; position 0 must be the
    uncertainty index. ``None`` keeps the stacking order. ``rescale`` sets
    a fixed impact size for the shocked variable instead of one standard error.
    """

    ordering: list[int] | None = None
    shock_index: int = 0
    rescale: float | None = None

    def __post_init__(self):
        if self.ordering is not None:
            if sorted(self.ordering) != list(range(len(self.ordering))):
                raise ValueError("ordering must be a permutation")
            if self.ordering[0] != self.shock_index:
                raise ValueError("the uncertainty index must be ordered first")


@dataclass
class StructuralResult:
    """Per-draw responses to the uncertainty shock.

    ``irf`` and ``fevd`` have shape ``(draws, L, H+1)``; ``fevd_full`` has
    shape ``(draws, L, L, H+1)`` indexed ``[draw, variable, shock, horizon]``
    with shocks in identification order.
    """

    irf: np.ndarray
    fevd: np.ndarray
    fevd_full: np.ndarray | None = None
    labels: list = field(default_factory=list)
    shock_labels: list = field(default_factory=list)
    explosive_draws: int = 0

    def quantiles(self, kind="irf") -> dict[str, np.ndarray]:
        return summarize_posterior(getattr(self, kind))


def identify_cholesky(Theta, ordering=None) -> np.ndarray:
    """Lower Cholesky factor of ``Theta`` permuted to ``ordering``."""
    Theta = np.asarray(Theta, dtype=float)
    if ordering is not None:
        idx = np.asarray(ordering)
        Theta = Theta[np.ix_(idx, idx)]
    Theta = 0.5 * (Theta + Theta.T)
    try:
        return np.linalg.cholesky(Theta)
    except np.linalg.LinAlgError:
        pass
    n = Theta.shape[0]
    jittered = Theta + 1e-8 * abs(np.trace(Theta)) / n * np.eye(n)
    try:
        return np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        for m in range(1, n + 1):
            if np.linalg.eigvalsh(jittered[:m, :m])[0] <= 0:
                raise NumericalError(
                    f"covariance not positive definite: leading minor of order {m}"
                ) from None
        raise NumericalError("covariance not positive definite") from None


def impact_matrix(Theta, ordering=None) -> np.ndarray:
    """Impact responses in stacking order; column ``s`` is the ``s``-th shock."""
    C = identify_cholesky(Theta, ordering)
    if ordering is None:
        return C
    B = np.empty_like(C)
    B[np.asarray(ordering)] = C
    return B


def _check_explosive(system: GlobalSystem):
    rad = system.spectral_radius()
    if rad > EXPLOSIVE_RADIUS:
        warnings.warn(f"explosive system: spectral radius {rad:.3f}",
                      ExplosiveSystemWarning, stacklevel=3)
        return True
    return False


def _propagate(G, impact, H):
    """Responses ``R[h] = sum_p G[p] R[h-p-1]`` starting from ``R[0] = impact``."""
    out = np.zeros((H + 1,) + impact.shape)
    out[0] = impact
    for h in range(1, H + 1):
        acc = np.zeros_like(impact)
        for p in range(min(G.shape[0], h)):
            acc += G[p] @ out[h - p - 1]
        out[h] = acc
    return out


def impulse_response(system: GlobalSystem, chol_col, H: int = 20) -> np.ndarray:
    """Responses of all variables to one impact vector, shape ``(H+1, n)``.

    Intercepts are excluded: the result is the deviation from the baseline path.
    """
    _check_explosive(system)
    return _propagate(system.G, np.asarray(chol_col, dtype=float), H)


def fevd(system: GlobalSystem, chol, H: int = 20) -> np.ndarray:
    """Orthogonalized FEVD, shape ``(n, n, H+1)`` indexed ``[variable, shock, h]``."""
    _check_explosive(system)
    return _fevd_shares(_propagate(system.G, np.asarray(chol, dtype=float), H))


def _fevd_shares(resp):
    cum = np.cumsum(resp ** 2, axis=0)                 # (H+1, n, n)
    total = cum.sum(axis=2, keepdims=True)
    zero = total == 0
    if np.any(zero):
        warnings.warn("zero forecast-error variance; shares set to 0", stacklevel=3)
    shares = np.divide(cum, total, out=np.zeros_like(cum), where=~zero)
    return np.transpose(shares, (1, 2, 0))


def summarize_posterior(draws) -> dict[str, np.ndarray]:
    """16th/50th/84th percentiles over the leading (draw) axis."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise ValueError("need at least two draws to summarize")
    q = np.percentile(draws, QUANTILES, axis=0, method="linear")
    return {"q16": q[0], "q50": q[1], "q84": q[2]}


def peak_and_classify(q16, q50, q84, regions=None, upper_frac=0.2,
                      lower_frac=0.2) -> list[dict]:
    """Peak median response per region and its sign/size class.

    Inputs are ``(R, H+1)`` quantile arrays for the inequality variable. The
    peak is the median value of largest magnitude (earliest horizon on ties).
    Regions whose 16-84 band covers zero at the peak are ``Insignificant``.
    The others are ``Positive``/``Negative`` when the peak lies beyond the
    upper/lower ``frac`` quantile of all regions' peaks, and
    ``Slightly positive``/``Slightly negative`` otherwise.
    """
    q16, q50, q84 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (q16, q50, q84))
    R = q50.shape[0]
    regions = list(regions) if regions is not None else [f"r{i}" for i in range(R)]
    hor = np.argmax(np.abs(q50), axis=1)
    rows = np.arange(R)
    peak = q50[rows, hor]
    signif = ~((q16[rows, hor] <= 0) & (q84[rows, hor] >= 0))
    upper = np.percentile(peak, 100 * (1 - upper_frac), method="linear")
    lower = np.percentile(peak, 100 * lower_frac, method="linear")
    out = []
    for i in range(R):
        if not signif[i]:
            cls = "Insignificant"
        elif peak[i] > 0:
            cls = "Positive" if peak[i] > upper else "Slightly positive"
        else:
            cls = "Negative" if peak[i] < lower else "Slightly negative"
        out.append({"region": regions[i], "peak_value": float(peak[i]),
                    "peak_horizon": int(hor[i]), "class": cls,
                    "upper_threshold": float(upper), "lower_threshold": float(lower)})
    return out


def structural_analysis(store, W, H: int = 20, design: ShockDesign | None = None,
                        theta_date: int | None = None, full_fevd: bool = True
                        ) -> StructuralResult:
    """IRFs and FEVDs for every retained draw of a ``PosteriorStore``.

    ``theta_date`` picks the covariance at that estimation-sample index instead
    of the time-averaged one.
    """
    design = design or ShockDesign()
    dims = store.dims
    L = dims.L
    s = 0
    irfs = np.empty((len(store), L, H + 1))
    shares = np.empty((len(store), L, H + 1))
    full = np.empty((len(store), L, L, H + 1)) if full_fevd else None
    n_explosive = 0
    for d, state in enumerate(store.draws):
        system = stack_global_system(W, state.regions, state.national, dims)
        if system.spectral_radius() > EXPLOSIVE_RADIUS:
            n_explosive += 1
        Theta = state.theta_bar() if theta_date is None else state.theta_at(theta_date)
        B = impact_matrix(Theta, design.ordering)
        col = B[:, s]
        if design.rescale is not None:
            col = col * (design.rescale / col[design.shock_index])
        irfs[d] = _propagate(system.G, col, H).T
        fe = _fevd_shares(_propagate(system.G, B, H))
        shares[d] = fe[:, s, :]
        if full is not None:
            full[d] = fe
    if n_explosive:
        warnings.warn(f"{n_explosive} of {len(store)} draws have spectral radius "
                      f"above {EXPLOSIVE_RADIUS}", ExplosiveSystemWarning, stacklevel=2)
    labels = list(store.labels)
    order = design.ordering or list(range(L))
    shock_labels = [labels[i] if labels else i for i in order]
    return StructuralResult(irf=irfs, fevd=shares, fevd_full=full, labels=labels,
                            shock_labels=shock_labels, explosive_draws=n_explosive)


def tidy_rows(result: StructuralResult, kind: str) -> list[dict]:
    """Rows ``(region, variable, shock, horizon, q16, q50, q84, kind, mean)``.

    ``kind="irf"`` and ``kind="fevd"`` cover the uncertainty shock;
    ``kind="fevd_full"`` emits every shock (written with ``kind=fevd``). The
    extra ``mean`` column holds the posterior mean, which for FEVD shares sums
    to one over shocks.
    """
    labels = result.labels or [("", str(i)) for i in range(result.irf.shape[1])]
    rows = []
    if kind == "fevd_full":
        arr = result.fevd_full
        q = summarize_posterior(arr)
        mean = arr.mean(axis=0)
        for v, (reg, var) in enumerate(labels):
            for s, slab in enumerate(result.shock_labels):
                for h in range(arr.shape[-1]):
                    rows.append({"region": reg, "variable": var,
                                 "shock": _shock_name(slab), "horizon": h,
                                 "q16": q["q16"][v, s, h], "q50": q["q50"][v, s, h],
                                 "q84": q["q84"][v, s, h], "kind": "fevd",
                                 "mean": mean[v, s, h]})
        return rows
    arr = getattr(result, kind)
    q = summarize_posterior(arr)
    mean = arr.mean(axis=0)
    shock = _shock_name(result.shock_labels[0]) if result.shock_labels else "0"
    for v, (reg, var) in enumerate(labels):
        for h in range(arr.shape[-1]):
            rows.append({"region": reg, "variable": var, "shock": shock, "horizon": h,
                         "q16": q["q16"][v, h], "q50": q["q50"][v, h],
                         "q84": q["q84"][v, h], "kind": kind, "mean": mean[v, h]})
    return rows


def _shock_name(label):
    if isinstance(label, (tuple, list)):
        return label[1] if label[0] == "national" else f"{label[0]}.{label[1]}"
    return str(label)
