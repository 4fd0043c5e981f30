import numpy as np
import pytest

from hgvar.model_core import ModelDims, WeightMatrix


def random_weights(N, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 1.0, size=(N, N))
    np.fill_diagonal(w, 0.0)
    return WeightMatrix(w / w.sum(axis=1, keepdims=True))


def mc_z(draws, expected):
    """Absolute z-scores of sample means against expected values."""
    draws = np.asarray(draws)
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    return np.abs(draws.mean(axis=0) - expected) / se


def cov_z(draws, expected_cov):
    """z-scores of sample second central moments, using fourth-moment SEs."""
    x = np.asarray(draws) - np.asarray(draws).mean(axis=0)
    n = x.shape[0]
    prods = x[:, :, None] * x[:, None, :]
    se = prods.std(axis=0, ddof=1) / np.sqrt(n)
    return np.abs(prods.mean(axis=0) - expected_cov) / se


@pytest.fixture
def small_dims():
    return ModelDims(N=3, k=2, ell=2, P=1, Q=1, F=1, T=60)


@pytest.fixture
def small_W():
    return random_weights(3, seed=1)


@pytest.fixture(scope="session")
def sampler_moment_z():
    """Max moment z-score per conditional sampler, computed once per session."""
    import time
    from oracles import SAMPLER_CHECKS
    start = time.perf_counter()
    z = {name: check() for name, check in SAMPLER_CHECKS.items()}
    return {"z": z, "seconds": time.perf_counter() - start}


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "RESULTS", None):
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
