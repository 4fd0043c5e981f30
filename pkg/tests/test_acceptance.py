"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and echoed in the pytest terminal
summary (see ``conftest.py``). Run on its own with

    pytest tests/test_acceptance.py -v
"""
import time

import numpy as np
import pytest

from hgvar.cli import run as cli_run
from hgvar.data_pipeline import (
    Centroids,
    annual_to_quarterly_spline,
    deseasonalize,
    inverse_distance_weights,
    weighted_gini,
)
from hgvar.model_core import GlobalSystem
from hgvar.structural import fevd, identify_cholesky, impulse_response

from oracles import (
    SAMPLER_CHECKS,
    factor_formula_max_error,
    gini_pairwise,
    recovery_run,
    simulate_sv,
    sv_posterior_means,
    two_path_irf_error,
)

RESULTS = []


def report(number, title, passed, detail):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def test_criterion_1_conditional_samplers(sampler_moment_z):
    z, elapsed = sampler_moment_z["z"], sampler_moment_z["seconds"]
    detail = ", ".join(f"{k} {v:.2f}" for k, v in z.items())
    report(1, "conditional samplers within 3 MC SE", max(z.values()) < 3.0 and elapsed < 120,
           f"max |z| per sampler: {detail}; {elapsed:.0f}s")


def test_criterion_2_factor_conditional():
    start = time.perf_counter()
    err = factor_formula_max_error(100, seed=2024)
    elapsed = time.perf_counter() - start
    report(2, "factor conditional vs precision form", err < 1e-10 and elapsed < 5,
           f"max abs diff {err:.2e} over 100 instances in {elapsed:.2f}s")


@pytest.mark.slow
def test_criterion_3_posterior_recovery():
    start = time.perf_counter()
    inside, total, err0 = recovery_run(0)
    single = time.perf_counter() - start
    errors = [err0]
    for seed in range(1, 20):
        i, n, e = recovery_run(seed)
        inside, total = inside + i, total + n
        errors.append(e)
    elapsed = time.perf_counter() - start
    coverage = 100 * inside / total
    ok = err0 <= 0.15 and abs(coverage - 68) <= 12 and single < 300 and elapsed < 7200
    report(3, "posterior recovery and calibration", ok,
           f"seed 0 max |median - truth| {err0:.3f} ({single:.0f}s); 68% coverage "
           f"{coverage:.1f}% ({inside}/{total}) over 20 seeds ({elapsed:.0f}s); "
           f"seeds within 0.15: {sum(e <= 0.15 for e in errors)}/20")


def test_criterion_4_sv_recovery():
    start = time.perf_counter()
    y = simulate_sv(3000, 0.4, 0.95, 0.04, seed=7)
    (phi, rho, s2), _ = sv_posterior_means(y, sweeps=3000, burn=1000, seed=8)
    elapsed = time.perf_counter() - start
    ok = 0.85 <= rho <= 0.99 and abs(phi - 0.4) <= 0.25 and elapsed < 60
    report(4, "SV recovery", ok,
           f"posterior mean rho {rho:.3f}, phi {phi:.3f}, sigma2 {s2:.3f} in {elapsed:.1f}s")


def test_criterion_5_structural_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    h0_exact, fevd_err, fevd_range = True, 0.0, True
    for _ in range(50):
        n, lags = int(rng.integers(2, 8)), int(rng.integers(1, 3))
        G = rng.normal(size=(lags, n, n))
        while GlobalSystem(G=G, c=np.zeros(n)).spectral_radius() >= 0.95:
            G *= 0.9
        system = GlobalSystem(G=G, c=np.zeros(n))
        A = rng.normal(size=(n, n))
        C = identify_cholesky(A @ A.T + np.eye(n))
        h0_exact &= bool(np.array_equal(impulse_response(system, C[:, 0], 20)[0], C[:, 0]))
        f = fevd(system, C, 20)
        fevd_range &= bool(f.min() >= 0 and f.max() <= 1)
        fevd_err = max(fevd_err, float(np.abs(f.sum(axis=1) - 1).max()))
    sim_err = max(two_path_irf_error(seed) for seed in range(20))
    elapsed = time.perf_counter() - start
    ok = h0_exact and fevd_range and fevd_err < 1e-10 and sim_err < 1e-10 and elapsed < 30
    report(5, "structural identities", ok,
           f"h=0 exact {h0_exact}; FEVD in [0,1] {fevd_range}, max |sum-1| {fevd_err:.1e}; "
           f"two-path max diff {sim_err:.1e} in {elapsed:.1f}s")


def test_criterion_6_gini():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    err = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        x, w = rng.lognormal(size=n), rng.uniform(0.1, 3.0, size=n)
        err = max(err, abs(weighted_gini(x, w) - gini_pairwise(x, w)))
    two = weighted_gini([0.0, 3.7], [1.0, 1.0])
    elapsed = time.perf_counter() - start
    ok = err < 1e-12 and two == 0.5 and elapsed < 10
    report(6, "Gini oracle", ok,
           f"max diff vs pairwise {err:.1e} over 1000 samples; two-point {two!r}; "
           f"{elapsed:.1f}s")


def test_criterion_7_pipeline_exactness():
    rng = np.random.default_rng(7)
    knot_err = des_err = row_err = 0.0
    for _ in range(100):
        years = range(1990, 1990 + int(rng.integers(3, 30)))
        annual = {y: float(v) for y, v in zip(years, rng.normal(size=len(years)))}
        periods, q = annual_to_quarterly_spline(annual)
        at_knots = np.array([q[periods.index(f"{y}Q2")] for y in annual])
        knot_err = max(knot_err, float(np.abs(at_knots - list(annual.values())).max()))
        T = int(rng.integers(8, 120))
        x = np.cumsum(rng.normal(size=T)) + np.tile(rng.normal(size=4), T // 4 + 1)[:T]
        q0 = int(rng.integers(1, 5))
        once = deseasonalize(x, start_quarter=q0)
        twice = deseasonalize(once, start_quarter=q0)
        des_err = max(des_err, float(np.abs(twice - once).max()))
        n = int(rng.integers(2, 40))
        conv = "spherical" if rng.random() < 0.5 else "planar"
        coords = (np.column_stack([rng.uniform(-120, -70, n), rng.uniform(25, 49, n)])
                  if conv == "spherical" else rng.uniform(0, 10, size=(n, 2)))
        W = inverse_distance_weights(Centroids([str(i) for i in range(n)], coords, conv)).W
        row_err = max(row_err, float(np.abs(W.sum(axis=1) - 1).max()))
    ok = knot_err < 1e-12 and des_err < 1e-10 and row_err < 1e-12
    report(7, "pipeline exactness", ok,
           f"spline knot err {knot_err:.1e}; deseasonalize idempotence err {des_err:.1e}; "
           f"row-sum err {row_err:.1e}")


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """The bundled-config pipeline run twice: once serial, once with 2 threads."""
    out = {}
    for name, threads in (("serial", "1"), ("threaded", "2")):
        d = tmp_path_factory.mktemp(name)
        start = time.perf_counter()
        codes = [cli_run([cmd, "--out", str(d), "--threads", threads])
                 for cmd in ("simulate", "estimate", "irf", "fevd", "classify", "regress")]
        out[name] = (d, codes, time.perf_counter() - start)
    return out


def test_criterion_8_determinism(pipeline_runs):
    (a, _, _), (b, _, _) = pipeline_runs["serial"], pipeline_runs["threaded"]
    files = ["posterior.bin", "irf.csv", "fevd.csv", "classification.csv", "regression.csv"]
    same = {f: (a / f).read_bytes() == (b / f).read_bytes() for f in files}
    report(8, "determinism across runs and thread counts", all(same.values()),
           "byte-identical: " + ", ".join(f"{f} {v}" for f, v in same.items()))


def test_criterion_9_end_to_end(pipeline_runs):
    d, codes, elapsed = pipeline_runs["serial"]
    declared = ["panel.csv", "schema.json", "centroids.csv", "covariates.csv", "survey.csv",
                "truth.json", "posterior.bin", "irf.csv", "fevd.csv", "classification.csv",
                "regression.csv"] + [f"manifest_{c}.json" for c in
                                     ("simulate", "estimate", "irf", "fevd", "classify",
                                      "regress")]
    missing = [f for f in declared if not (d / f).exists()]
    ok = all(c == 0 for c in codes) and not missing and elapsed < 300
    report(9, "end-to-end smoke on the bundled config", ok,
           f"exit codes {codes}; missing artifacts {missing}; {elapsed:.0f}s")
