"""
Ingestion and series transformations.

Conventions
-----------
* Quarterly periods are ``"YYYYQn"`` strings.
* Annual survey values are anchored at the second quarter of their year
  before natural cubic spline interpolation; quarters outside the first and
  last anchors are extrapolated linearly (the natural end condition).
* Seasonal adjustment subtracts quarter-of-year means and adds back the
  overall mean (dummy-variable regression).
* Monthly series are aggregated to quarters by their mean.
"""
from __future__ import annotations

import csv
import json
import logging
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .model_core import PanelDataset, WeightMatrix

logger = logging.getLogger(__name__)

DIRECTIVES = ("log", "first_difference", "none")
EARTH_RADIUS_KM = 6371.0
_PERIOD_RE = re.compile(r"^(\d{4})Q([1-4])$")


class SchemaError(ValueError):
    """Input file does not match its declared schema."""


# ---------------------------------------------------------------------------
# periods

def parse_period(label: str) -> tuple[int, int]:
    m = _PERIOD_RE.match(label.strip())
    if not m:
        raise ValueError(f"bad period label {label!r}, expected e.g. '1985Q1'")
    return int(m.group(1)), int(m.group(2))


def format_period(year: int, quarter: int) -> str:
    return f"{year}Q{quarter}"


def quarter_range(start: str, stop: str) -> list[str]:
    y, q = parse_period(start)
    end = parse_period(stop)
    out = []
    while (y, q) <= end:
        out.append(format_period(y, q))
        y, q = (y + 1, 1) if q == 4 else (y, q + 1)
    return out


# ---------------------------------------------------------------------------
# types

@dataclass
class TransformSpec:
    """Per-series directive and seasonal-adjustment flag.

    Keys are variable names; they apply to that variable in every region.
    Variables missing from ``directives`` get ``"none"``; variables missing
    from ``deseasonalize`` get ``default_deseasonalize``.
    """

    directives: dict[str, str] = field(default_factory=dict)
    deseasonalize: dict[str, bool] = field(default_factory=dict)
    default_deseasonalize: bool = True

    def __post_init__(self):
        bad = {k: v for k, v in self.directives.items() if v not in DIRECTIVES}
        if bad:
            raise ValueError(f"unknown transform directives: {bad}")

    def directive(self, var: str) -> str:
        return self.directives.get(var, "none")

    def seasonal(self, var: str) -> bool:
        return self.deseasonalize.get(var, self.default_deseasonalize)


@dataclass
class Centroids:
    """Region centroids; ``spherical`` means (longitude, latitude) in degrees."""

    names: list[str]
    coords: np.ndarray
    convention: str = "planar"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if self.convention not in ("planar", "spherical"):
            raise ValueError("convention must be 'planar' or 'spherical'")
        if len(self.names) != self.coords.shape[0]:
            raise ValueError("one name per centroid required")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("centroid coordinates must be finite")


@dataclass
class SurveyRecords:
    income: np.ndarray
    household_size: np.ndarray
    weight: np.ndarray
    period: np.ndarray

    def __post_init__(self):
        self.income = np.asarray(self.income, dtype=float)
        self.household_size = np.asarray(self.household_size)
        self.weight = np.asarray(self.weight, dtype=float)
        self.period = np.asarray(self.period)
        n = self.income.shape[0]
        if not (self.household_size.shape[0] == self.weight.shape[0]
                == self.period.shape[0] == n):
            raise ValueError("survey columns must have equal length")
        if np.any(self.weight < 0):
            raise ValueError("survey weights must be non-negative")


@dataclass
class RawPanel:
    """Untransformed panel; may still contain seasonal patterns."""

    Y: np.ndarray
    Z: np.ndarray
    periods: list[str]
    regions: list[str]
    region_vars: list[str]
    national_vars: list[str]


# ---------------------------------------------------------------------------
# income and inequality

def equivalize(records: SurveyRecords) -> np.ndarray:
    """Square-root-scale equivalized income with negatives set to zero."""
    size = np.asarray(records.household_size, dtype=float)
    if np.any(size < 1):
        bad = np.flatnonzero(size < 1)[:5].tolist()
        raise ValueError(f"household size must be >= 1 (records {bad})")
    return np.maximum(records.income, 0.0) / np.sqrt(size)


def weighted_gini(values, weights=None) -> float:
    """Weighted Gini coefficient without small-sample correction.

    ``G = sum_ij w_i w_j |x_i - x_j| / (2 W^2 xbar)``, evaluated in
    ``O(n log n)`` after sorting.
    """
    x = np.asarray(values, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.ndim != 1:
        raise ValueError("values and weights must be 1-d arrays of equal length")
    if np.any(x < 0) or np.any(w < 0):
        raise ValueError("values and weights must be non-negative")
    total_w = w.sum()
    if total_w <= 0:
        raise ValueError("weights sum to zero")
    mass = np.dot(w, x)
    if mass <= 0:
        raise ValueError("Gini undefined: all values are zero")
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    before = np.cumsum(ws) - ws
    after = total_w - before - ws
    s = np.dot(ws * xs, before - after)
    return float(s / (total_w * mass))


def gini_by_period(records: SurveyRecords) -> dict:
    """Gini of equivalized income for each period label."""
    eq = equivalize(records)
    out = {}
    for p in sorted(set(records.period.tolist())):
        mask = records.period == p
        if not np.any(records.weight[mask] > 0):
            raise ValueError(f"period {p} has no positive weight")
        out[p] = weighted_gini(eq[mask], records.weight[mask])
    return out


# ---------------------------------------------------------------------------
# frequency conversion and seasonal adjustment

def annual_to_quarterly_spline(annual: dict) -> tuple[list[str], np.ndarray]:
    """Interpolate annual values to every quarter of the covered years.

    Knots sit at Q2 of each year. Fewer than three points fall back to linear
    interpolation with a warning.
    """
    years = np.array(sorted(annual), dtype=int)
    if years.size == 0:
        raise ValueError("no annual observations")
    if np.any(np.diff(years) <= 0):
        raise ValueError("years must be strictly increasing")
    vals = np.array([annual[y] for y in years], dtype=float)
    y0 = int(years[0])
    knots = 4.0 * (years - y0) + 1.0
    grid = np.arange(4 * (int(years[-1]) - y0) + 4, dtype=float)
    periods = [format_period(y0 + int(g) // 4, int(g) % 4 + 1) for g in grid]
    if years.size < 3:
        warnings.warn("fewer than three annual points: using linear interpolation",
                      stacklevel=2)
        if years.size == 1:
            return periods, np.full(grid.shape, vals[0])
        slope = (vals[1] - vals[0]) / (knots[1] - knots[0])
        return periods, vals[0] + slope * (grid - knots[0])
    spline = CubicSpline(knots, vals, bc_type="natural")
    out = spline(grid)
    lo, hi = grid < knots[0], grid > knots[-1]
    out[lo] = vals[0] + spline(knots[0], 1) * (grid[lo] - knots[0])
    out[hi] = vals[-1] + spline(knots[-1], 1) * (grid[hi] - knots[-1])
    return periods, out


def monthly_to_quarterly(values, start_month: int = 1) -> np.ndarray:
    """Quarterly means of a monthly series starting in the first month of a quarter."""
    if start_month not in (1, 4, 7, 10):
        raise ValueError("monthly series must start at the beginning of a quarter")
    v = np.asarray(values, dtype=float)
    n = v.size // 3
    return v[: 3 * n].reshape(n, 3).mean(axis=1)


def deseasonalize(series, quarters=None, start_quarter: int = 1) -> np.ndarray:
    """Remove quarter-of-year effects, keeping the overall mean.

    ``quarters`` gives the quarter (1-4) of each observation; otherwise the
    series is assumed to start in ``start_quarter``.
    """
    x = np.asarray(series, dtype=float)
    if quarters is None:
        quarters = (np.arange(x.size) + start_quarter - 1) % 4 + 1
    quarters = np.asarray(quarters)
    if x.size < 8:
        warnings.warn("fewer than 8 quarters: series left unadjusted", stacklevel=2)
        return x.copy()
    out = x.copy()
    overall = x.mean()
    for q in range(1, 5):
        m = quarters == q
        if np.any(m):
            out[m] = x[m] - x[m].mean() + overall
    return out


def first_difference(series) -> np.ndarray:
    return np.diff(np.asarray(series, dtype=float))


# ---------------------------------------------------------------------------
# panel transforms

def _transform_series(x, var, name, spec, quarters, periods, log):
    if spec.seasonal(var):
        x = deseasonalize(x, quarters)
        log.append({"series": name, "directive": "deseasonalize"})
    d = spec.directive(var)
    if d == "log":
        bad = np.flatnonzero(~(x > 0))
        if bad.size:
            raise ValueError(f"log of non-positive value in series {name} "
                             f"at period {periods[bad[0]]}")
        x = np.log(x)
    elif d == "first_difference":
        x = np.concatenate([[np.nan], first_difference(x)])
    log.append({"series": name, "directive": d})
    return x


def apply_transforms(raw: RawPanel, spec: TransformSpec) -> PanelDataset:
    """Seasonal adjustment, then log or difference, then common-sample trim."""
    quarters = np.array([parse_period(p)[1] for p in raw.periods])
    Y = np.array(raw.Y, dtype=float)
    Z = np.array(raw.Z, dtype=float)
    log: list[dict] = []
    for i, r in enumerate(raw.regions):
        for j, v in enumerate(raw.region_vars):
            Y[:, i, j] = _transform_series(Y[:, i, j], v, f"{r}.{v}", spec,
                                           quarters, raw.periods, log)
    for j, v in enumerate(raw.national_vars):
        Z[:, j] = _transform_series(Z[:, j], v, f"national.{v}", spec,
                                    quarters, raw.periods, log)
    used = [spec.directive(v) for v in list(raw.region_vars) + list(raw.national_vars)]
    start = 1 if "first_difference" in used else 0
    if start:
        log.append({"series": "*", "directive": "trim", "dropped": raw.periods[:start]})
    return PanelDataset(Y=Y[start:], Z=Z[start:], regions=list(raw.regions),
                        region_vars=list(raw.region_vars),
                        national_vars=list(raw.national_vars),
                        periods=list(raw.periods[start:]), transform_log=log)


# ---------------------------------------------------------------------------
# spatial weights

def _distances(c: Centroids) -> np.ndarray:
    if c.convention == "planar":
        diff = c.coords[:, None, :] - c.coords[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))
    lon, lat = np.radians(c.coords[:, 0]), np.radians(c.coords[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = (np.sin(dlat / 2) ** 2
         + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2)
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def inverse_distance_weights(centroids: Centroids) -> WeightMatrix:
    """Row-normalized inverse-distance weights with a zero diagonal."""
    n = len(centroids.names)
    if n < 2:
        raise ValueError("need at least two regions")
    d = _distances(centroids)
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        i, j = np.argwhere((d <= 0) & off)[0]
        raise ValueError(f"coincident centroids: {centroids.names[i]} and "
                         f"{centroids.names[j]}")
    w = np.zeros((n, n))
    w[off] = 1.0 / d[off]
    w /= w.sum(axis=1, keepdims=True)
    return WeightMatrix(w)


# ---------------------------------------------------------------------------
# CSV readers

def _read_rows(path, required, optional=(), permissive=False):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: missing header row")
        cols = [c.strip() for c in reader.fieldnames]
        missing = [c for c in required if c not in cols]
        unknown = [c for c in cols if c not in required and c not in optional]
        problems = []
        if missing:
            problems.append(f"missing columns {missing}")
        if unknown and not permissive:
            problems.append(f"unknown columns {unknown}")
        if problems:
            raise SchemaError(f"{path}: " + "; ".join(problems))
        return [{k.strip(): (v or "").strip() for k, v in row.items()} for row in reader]


def load_schema(path) -> dict:
    schema = json.loads(Path(path).read_text(encoding="utf-8"))
    allowed = {"regions", "region_variables", "national_variables", "national_label",
               "transforms", "deseasonalize", "inequality_variable"}
    unknown = set(schema) - allowed
    problems = [f"unknown schema keys {sorted(unknown)}"] if unknown else []
    for key in ("region_variables", "national_variables"):
        if key not in schema:
            problems.append(f"missing schema key {key!r}")
    if problems:
        raise SchemaError("; ".join(problems))
    return schema


def transform_spec_from_schema(schema: dict) -> TransformSpec:
    des = schema.get("deseasonalize", True)
    if isinstance(des, bool):
        return TransformSpec(dict(schema.get("transforms", {})), {}, des)
    return TransformSpec(dict(schema.get("transforms", {})), dict(des), True)


def read_panel_csv(path, schema: dict, permissive=False) -> RawPanel:
    """Long-format panel ``region,variable,period,value``.

    National series use the region label ``schema["national_label"]``
    (default ``"national"``). Every declared series must be observed at every
    period of the contiguous quarterly range spanned by the file.
    """
    rows = _read_rows(path, ("region", "variable", "period", "value"),
                      permissive=permissive)
    nat = schema.get("national_label", "national")
    rvars = list(schema["region_variables"])
    nvars = list(schema["national_variables"])
    regions = list(schema.get("regions") or
                   dict.fromkeys(r["region"] for r in rows if r["region"] != nat))
    labels = sorted({r["period"] for r in rows}, key=parse_period)
    if not labels:
        raise SchemaError(f"{path}: no observations")
    periods = quarter_range(labels[0], labels[-1])
    pidx = {p: t for t, p in enumerate(periods)}
    ridx = {r: i for i, r in enumerate(regions)}
    Y = np.full((len(periods), len(regions), len(rvars)), np.nan)
    Z = np.full((len(periods), len(nvars)), np.nan)
    problems = []
    for n, row in enumerate(rows, start=2):
        try:
            value = float(row["value"])
        except ValueError:
            problems.append(f"line {n}: bad value {row['value']!r}")
            continue
        t = pidx[row["period"]] if row["period"] in pidx else None
        if t is None:
            problems.append(f"line {n}: bad period {row['period']!r}")
        elif row["region"] == nat:
            if row["variable"] in nvars:
                Z[t, nvars.index(row["variable"])] = value
            elif not permissive:
                problems.append(f"line {n}: unknown national variable {row['variable']!r}")
        elif row["region"] in ridx and row["variable"] in rvars:
            Y[t, ridx[row["region"]], rvars.index(row["variable"])] = value
        elif not permissive:
            problems.append(f"line {n}: unknown series {row['region']}.{row['variable']}")
    n_missing = int(np.isnan(Y).sum() + np.isnan(Z).sum())
    if n_missing:
        problems.append(f"{n_missing} missing (series, period) cells")
    if problems:
        raise SchemaError(f"{path}: " + "; ".join(problems[:20]))
    return RawPanel(Y, Z, periods, regions, rvars, nvars)


def write_panel_csv(path, data) -> None:
    """Write a ``PanelDataset`` or ``RawPanel`` in long format."""
    periods = data.periods or [f"t{t}" for t in range(data.Y.shape[0])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "variable", "period", "value"])
        for t, p in enumerate(periods):
            for j, v in enumerate(data.national_vars):
                w.writerow(["national", v, p, repr(float(data.Z[t, j]))])
            for i, r in enumerate(data.regions):
                for j, v in enumerate(data.region_vars):
                    w.writerow([r, v, p, repr(float(data.Y[t, i, j]))])


def read_survey_csv(path, permissive=False) -> SurveyRecords:
    """Survey microdata with columns ``income,size,weight,year``."""
    rows = _read_rows(path, ("income", "size", "weight", "year"), permissive=permissive)
    try:
        return SurveyRecords(
            income=[float(r["income"]) for r in rows],
            household_size=[int(r["size"]) for r in rows],
            weight=[float(r["weight"]) for r in rows],
            period=[int(r["year"]) for r in rows])
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def read_centroids_csv(path, permissive=False) -> Centroids:
    """Centroids with columns ``region,x,y,convention``."""
    rows = _read_rows(path, ("region", "x", "y", "convention"), permissive=permissive)
    conventions = {r["convention"] for r in rows}
    if len(conventions) != 1:
        raise SchemaError(f"{path}: mixed coordinate conventions {sorted(conventions)}")
    return Centroids(names=[r["region"] for r in rows],
                     coords=[[float(r["x"]), float(r["y"])] for r in rows],
                     convention=conventions.pop())
