"""
Command-line interface.

    hgvar simulate  --config cfg.json --out run/
    hgvar estimate  --config cfg.json --out run/
    hgvar irf | fevd | classify | regress | gini  --out run/

Every flag can also come from an environment variable ``HGVAR_<FLAG>``
(``HGVAR_CONFIG``, ``HGVAR_SEED``, ``HGVAR_OUT``, ``HGVAR_THREADS``,
``HGVAR_HORIZON``); explicit flags win. Without ``--config`` the bundled
small configuration is used.

Exit codes: 0 success, 2 configuration or input-schema error, 3 numerical
failure, 4 I/O error. Failures print a JSON object to stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from ._linalg import NumericalError
from .analysis import (
    TABLE1_COVARIATES,
    RankDeficientError,
    ResponseRegressionInput,
    UnstableSystemError,
    ols_regress,
    random_truth,
    synth_generate,
)
from .data_pipeline import (
    Centroids,
    SchemaError,
    annual_to_quarterly_spline,
    apply_transforms,
    gini_by_period,
    inverse_distance_weights,
    load_schema,
    quarter_range,
    read_centroids_csv,
    read_panel_csv,
    read_survey_csv,
    transform_spec_from_schema,
    write_panel_csv,
)
from .model_core import ModelDims
from .priors_mcmc import PosteriorStore, PriorConfig, SamplerConfig, SamplerError, run_gibbs
from .structural import ShockDesign, peak_and_classify, structural_analysis, tidy_rows

logger = logging.getLogger("hgvar")

ENV_PREFIX = "HGVAR_"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("simulate", "estimate", "irf", "fevd", "classify", "gini", "regress")
REGRESS_COVARIATES = TABLE1_COVARIATES + ("unemp",)
STRUCTURAL_COLUMNS = ["region", "variable", "shock", "horizon", "q16", "q50", "q84",
                      "kind", "mean"]


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ---------------------------------------------------------------------------
# configuration

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    panel: Optional[str] = None
    panel_schema: Optional[str] = None
    centroids: Optional[str] = None
    covariates: Optional[str] = None
    survey: Optional[str] = None
    permissive: bool = False


class ModelSection(_Section):
    P: int = Field(1, ge=1)
    Q: int = Field(1, ge=1)
    F: int = Field(1, ge=0)
    national_intercept: bool = False


class PriorSection(_Section):
    V0_scale: float = Field(10.0, gt=0)
    d0: float = Field(0.01, gt=0)
    d1: float = Field(0.01, gt=0)
    national_coef_var: float = Field(10.0, gt=0)
    loading_var: float = Field(100.0, gt=0)
    sv_mean_var: float = Field(100.0, gt=0)
    sv_sigma_shape: float = Field(0.5, gt=0)
    sv_sigma_rate: float = Field(0.5, gt=0)
    sv_rho_a: float = Field(25.0, gt=0)
    sv_rho_b: float = Field(5.0, gt=0)


class SamplerSection(_Section):
    total_iterations: int = Field(10000, ge=1)
    burn_in: int = Field(5000, ge=0)
    thin: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _burn_before_total(self):
        if self.burn_in >= self.total_iterations:
            raise ValueError("burn_in must be smaller than total_iterations")
        return self


class StructuralSection(_Section):
    horizon: int = Field(20, ge=1)
    theta: Union[Literal["average"], int] = "average"
    rescale: Optional[float] = None
    upper_frac: float = Field(0.2, gt=0, le=0.5)
    lower_frac: float = Field(0.2, gt=0, le=0.5)
    inequality_variable: Optional[str] = None
    regress_horizons: list[str] = ["4", "8", "12", "peak"]
    regress_covariates: list[str] = list(TABLE1_COVARIATES)

    @model_validator(mode="after")
    def _horizons(self):
        bad = [h for h in self.regress_horizons if h != "peak" and not h.isdigit()]
        if bad:
            raise ValueError(f"regress_horizons must be integers or 'peak': {bad}")
        unknown = set(self.regress_covariates) - set(REGRESS_COVARIATES)
        if unknown or not self.regress_covariates:
            raise ValueError(f"regress_covariates must be a non-empty subset of "
                             f"{list(REGRESS_COVARIATES)}")
        return self


class SimulateSection(_Section):
    N: int = Field(5, ge=1)
    T: int = Field(120, ge=8)
    region_variables: list[str] = ["gini", "income"]
    national_variables: list[str] = ["epu", "gdp"]
    start_period: str = "1990Q1"
    truth_seed: int = Field(0, ge=0)
    v_scale: float = Field(0.003, gt=0)
    survey_households: int = Field(400, ge=10)


class RunConfig(_Section):
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    prior: PriorSection = PriorSection()
    sampler: SamplerSection = SamplerSection()
    structural: StructuralSection = StructuralSection()
    simulate: SimulateSection = SimulateSection()
    output_dir: Optional[str] = None


def load_config(path=None) -> tuple[RunConfig, Path, str]:
    """Parse and validate a JSON run configuration.

    Returns the config, the directory relative paths resolve against, and
    the canonical config text used for hashing.
    """
    if path is None:
        text = resources.files("hgvar").joinpath("data/small.json").read_text("utf-8")
        base = Path.cwd()
    else:
        text = Path(path).read_text(encoding="utf-8")
        base = Path(path).resolve().parent
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError([f"{'.'.join(map(str, e['loc'])) or '<root>'}: {e['msg']}"
                           for e in exc.errors()]) from exc
    canonical = json.dumps(cfg.model_dump(), sort_keys=True)
    return cfg, base, canonical


# ---------------------------------------------------------------------------
# helpers

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path: Path, rows, columns) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: _fmt(row[c]) for c in columns})


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"hgvar": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def write_manifest(out: Path, command: str, canonical: str, seed, inputs, outputs,
                   extra=None) -> Path:
    manifest = {
        "command": command,
        "config": json.loads(canonical),
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class Context:
    def __init__(self, cfg: RunConfig, base: Path, canonical: str, out: Path,
                 seed: int, threads: int, horizon: int):
        self.cfg, self.base, self.canonical = cfg, base, canonical
        self.out, self.seed, self.threads, self.horizon = out, seed, threads, horizon

    def path(self, key: str, default: str) -> Path:
        given = getattr(self.cfg.data, key)
        if given is None:
            return self.out / default
        p = Path(given)
        return p if p.is_absolute() else self.base / p

    def load_panel(self):
        schema_path = self.path("panel_schema", "schema.json")
        panel_path = self.path("panel", "panel.csv")
        schema = load_schema(schema_path)
        raw = read_panel_csv(panel_path, schema, permissive=self.cfg.data.permissive)
        data = apply_transforms(raw, transform_spec_from_schema(schema))
        return data, schema, [schema_path, panel_path]

    def load_weights(self, regions):
        path = self.path("centroids", "centroids.csv")
        cen = read_centroids_csv(path, permissive=self.cfg.data.permissive)
        missing = [r for r in regions if r not in cen.names]
        if missing:
            raise SchemaError(f"{path}: no centroid for regions {missing}")
        order = [cen.names.index(r) for r in regions]
        cen = Centroids([cen.names[i] for i in order], cen.coords[order], cen.convention)
        return inverse_distance_weights(cen), path

    def load_posterior(self):
        path = self.out / "posterior.bin"
        return PosteriorStore.load(path), path

    def structural(self, store, full_fevd=False):
        s = self.cfg.structural
        theta_date = None if s.theta == "average" else int(s.theta)
        return structural_analysis(store, store.W, H=self.horizon,
                                   design=ShockDesign(rescale=s.rescale),
                                   theta_date=theta_date, full_fevd=full_fevd)


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(ctx: Context) -> list[Path]:
    sim, mdl = ctx.cfg.simulate, ctx.cfg.model
    dims = ModelDims(N=sim.N, k=len(sim.region_variables), ell=len(sim.national_variables),
                     P=mdl.P, Q=mdl.Q, F=mdl.F, T=sim.T)
    rng = np.random.default_rng(sim.truth_seed)
    regions = [f"R{i:02d}" for i in range(sim.N)]
    cen = Centroids(regions, rng.uniform(0.0, 10.0, size=(sim.N, 2)), "planar")
    W = inverse_distance_weights(cen)
    truth = random_truth(dims, W, seed=sim.truth_seed, v_scale=sim.v_scale)
    start = sim.start_period
    periods = quarter_range(start, _shift_quarters(start, sim.T - 1))
    data, record = synth_generate(dims, truth, W, seed=ctx.seed, labels={
        "regions": regions, "region_vars": sim.region_variables,
        "national_vars": sim.national_variables, "periods": periods})
    out = ctx.out
    paths = [out / n for n in ("panel.csv", "schema.json", "centroids.csv",
                               "covariates.csv", "survey.csv", "truth.json")]
    write_panel_csv(paths[0], data)
    schema = {"regions": regions, "region_variables": sim.region_variables,
              "national_variables": sim.national_variables, "national_label": "national",
              "transforms": {v: "none" for v in sim.region_variables + sim.national_variables},
              "deseasonalize": False}
    paths[1].write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    write_csv(paths[2], [{"region": r, "x": x, "y": y, "convention": "planar"}
                         for r, (x, y) in zip(regions, cen.coords)],
              ["region", "x", "y", "convention"])
    names = list(REGRESS_COVARIATES)
    cov = rng.uniform(0.0, 1.0, size=(sim.N, len(names)))
    write_csv(paths[3], [dict(region=r, **dict(zip(names, row))) for r, row in zip(regions, cov)],
              ["region"] + names)
    years = sorted({p[:4] for p in periods})
    hh = sim.survey_households
    survey = [{"income": inc, "size": int(sz), "weight": w, "year": y}
              for y in years
              for inc, sz, w in zip(rng.lognormal(10.0, 0.8, hh) - 2000.0,
                                    rng.integers(1, 7, hh), rng.uniform(0.5, 2.0, hh))]
    write_csv(paths[4], survey, ["income", "size", "weight", "year"])
    truth_json = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                  for k, v in record.items() if k not in ("innovations", "factors",
                                                          "log_vol_factors", "log_vol_idio")}
    truth_json["dims"] = dims.__dict__
    paths[5].write_text(json.dumps(truth_json, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def _shift_quarters(label: str, n: int) -> str:
    y, q = int(label[:4]), int(label[-1])
    idx = y * 4 + (q - 1) + n
    return f"{idx // 4}Q{idx % 4 + 1}"


def cmd_estimate(ctx: Context) -> list[Path]:
    data, _, inputs = ctx.load_panel()
    W, wpath = ctx.load_weights(data.regions)
    m, s = ctx.cfg.model, ctx.cfg.sampler
    sampler = SamplerConfig(s.total_iterations, s.burn_in, s.thin, ctx.seed)
    store = run_gibbs(data, W, PriorConfig(**ctx.cfg.prior.model_dump()), sampler,
                      P=m.P, Q=m.Q, F=m.F, threads=ctx.threads,
                      national_intercept=m.national_intercept)
    path = ctx.out / "posterior.bin"
    store.save(path)
    ctx.inputs = inputs + [wpath]
    return [path]


def cmd_irf(ctx: Context) -> list[Path]:
    store, ppath = ctx.load_posterior()
    res = ctx.structural(store)
    path = ctx.out / "irf.csv"
    write_csv(path, tidy_rows(res, "irf"), STRUCTURAL_COLUMNS)
    ctx.inputs = [ppath]
    return [path]


def cmd_fevd(ctx: Context) -> list[Path]:
    store, ppath = ctx.load_posterior()
    res = ctx.structural(store, full_fevd=True)
    path = ctx.out / "fevd.csv"
    write_csv(path, tidy_rows(res, "fevd_full"), STRUCTURAL_COLUMNS)
    ctx.inputs = [ppath]
    return [path]


def _inequality_quantiles(ctx, store):
    res = ctx.structural(store)
    labels = res.labels
    var = ctx.cfg.structural.inequality_variable
    region_vars = [v for r, v in labels if r != "national"]
    var = var or region_vars[0]
    if var not in region_vars:
        raise ConfigError([f"structural.inequality_variable: unknown variable {var!r}"])
    idx = [i for i, (r, v) in enumerate(labels) if r != "national" and v == var]
    regions = [labels[i][0] for i in idx]
    q = res.quantiles("irf")
    return regions, {k: a[idx] for k, a in q.items()}


def cmd_classify(ctx: Context) -> list[Path]:
    store, ppath = ctx.load_posterior()
    regions, q = _inequality_quantiles(ctx, store)
    s = ctx.cfg.structural
    rows = peak_and_classify(q["q16"], q["q50"], q["q84"], regions,
                             upper_frac=s.upper_frac, lower_frac=s.lower_frac)
    path = ctx.out / "classification.csv"
    write_csv(path, rows, ["region", "peak_value", "peak_horizon", "class"])
    ctx.inputs = [ppath]
    return [path]


def cmd_regress(ctx: Context) -> list[Path]:
    store, ppath = ctx.load_posterior()
    regions, q = _inequality_quantiles(ctx, store)
    cpath = ctx.path("covariates", "covariates.csv")
    with cpath.open(newline="", encoding="utf-8") as fh:
        table = {row["region"]: row for row in csv.DictReader(fh)}
    missing = [r for r in regions if r not in table]
    if missing:
        raise SchemaError(f"{cpath}: no covariates for regions {missing}")
    names = list(ctx.cfg.structural.regress_covariates)
    absent = [c for c in names if c not in next(iter(table.values()))]
    if absent:
        raise SchemaError(f"{cpath}: missing covariate columns {absent}")
    X = np.array([[float(table[r][c]) for c in names] for r in regions])
    peaks = peak_and_classify(q["q16"], q["q50"], q["q84"], regions)
    rows = []
    for h in ctx.cfg.structural.regress_horizons:
        if h == "peak":
            y = np.array([p["peak_value"] for p in peaks])
        else:
            if int(h) > ctx.horizon:
                raise ConfigError([f"regress horizon {h} exceeds --horizon {ctx.horizon}"])
            y = q["q50"][:, int(h)]
        fit = ols_regress(ResponseRegressionInput(regions, y, X, names))
        for r in fit.rows():
            rows.append(dict(horizon=h, r2=fit.r2, nobs=fit.nobs, **r))
    path = ctx.out / "regression.csv"
    write_csv(path, rows, ["horizon", "term", "coef", "se", "t", "p", "stars", "r2", "nobs"])
    ctx.inputs = [ppath, cpath]
    return [path]


def cmd_gini(ctx: Context) -> list[Path]:
    spath = ctx.path("survey", "survey.csv")
    records = read_survey_csv(spath, permissive=ctx.cfg.data.permissive)
    ginis = gini_by_period(records)
    annual = ctx.out / "gini.csv"
    write_csv(annual, [{"year": y, "gini": g} for y, g in ginis.items()], ["year", "gini"])
    periods, values = annual_to_quarterly_spline(ginis)
    quarterly = ctx.out / "gini_quarterly.csv"
    write_csv(quarterly, [{"period": p, "gini": v} for p, v in zip(periods, values)],
              ["period", "gini"])
    ctx.inputs = [spath]
    return [annual, quarterly]


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "irf": cmd_irf,
            "fevd": cmd_fevd, "classify": cmd_classify, "gini": cmd_gini,
            "regress": cmd_regress}


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for sampling")
    common.add_argument("--horizon", type=int, help="impulse-response horizon")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="hgvar", description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _resolve(args, name, cast=str):
    val = getattr(args, name)
    if val is None:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            try:
                val = cast(env)
            except ValueError:
                raise ConfigError([f"{ENV_PREFIX}{name.upper()}: invalid value {env!r}"])
    return val


def _fail(code, exc) -> int:
    payload = {"exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["problems"] = exc.problems
    print(json.dumps(payload), file=sys.stderr)
    return code


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, base, canonical = load_config(_resolve(args, "config"))
        problems = []
        seed = _resolve(args, "seed", int)
        seed = cfg.sampler.seed if seed is None else seed
        threads = _resolve(args, "threads", int)
        threads = 1 if threads is None else threads
        horizon = _resolve(args, "horizon", int)
        horizon = cfg.structural.horizon if horizon is None else horizon
        out = _resolve(args, "out") or cfg.output_dir
        if not 0 <= seed < 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        if threads < 1:
            problems.append("threads must be >= 1")
        if horizon < 1:
            problems.append("horizon must be >= 1")
        if out is None:
            problems.append("no output directory: pass --out or set output_dir")
        if problems:
            raise ConfigError(problems)
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, base, canonical, out, seed, threads, horizon)
        ctx.inputs = []
        outputs = HANDLERS[args.command](ctx)
        write_manifest(out, args.command, canonical, seed, ctx.inputs, outputs,
                       extra={"threads": threads, "horizon": horizon})
    except (ConfigError, SchemaError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (NumericalError, SamplerError, UnstableSystemError, RankDeficientError,
            np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
