"""Pytest configuration and fixtures"""
import os
import shutil
import tempfile
from pathlib import Path

import pytest

from regimebound.model import GBM, PayoffSpec, ProblemSpec, Put, RateBoxes, Table
from regimebound.pde import SolverSettings, build_grid


@pytest.fixture(scope="session")
def temp_dir():
    """Create a temporary directory for tests"""
    temp_path = tempfile.mkdtemp()
    yield Path(temp_path)
    shutil.rmtree(temp_path)


@pytest.fixture
def mock_env_vars():
    """Restore the process environment after the test"""
    original_env = os.environ.copy()
    yield
    os.environ.clear()
    os.environ.update(original_env)


def make_put_problem(sigma=(0.2,), strike=1.0, x0=1.0, horizon=0.5, mu=0.05, alpha=0.05, y0=1):
    return ProblemSpec(
        dynamics=GBM(mu=mu),
        sigma=tuple(sigma),
        payoff=PayoffSpec(Put(strike)),
        horizon_T=horizon,
        alpha=alpha,
        x0=x0,
        y0=y0,
    )


@pytest.fixture
def put_problem():
    """Factory for GBM put problems with overridable parameters"""
    return make_put_problem


@pytest.fixture
def single_put():
    """One-regime GBM put at the money"""
    return make_put_problem()


@pytest.fixture
def increasing_put():
    """Two-regime GBM put with sigma increasing in the regime index"""
    return make_put_problem(sigma=(0.2, 0.4))


@pytest.fixture
def decreasing_put():
    return make_put_problem(sigma=(0.4, 0.2))


@pytest.fixture
def zero_payoff_problem():
    return ProblemSpec(
        dynamics=GBM(mu=0.05),
        sigma=(0.2, 0.4),
        payoff=PayoffSpec(Table(((0.0, 0.0), (10.0, 0.0)))),
        horizon_T=0.5,
        alpha=0.05,
        x0=1.0,
    )


@pytest.fixture
def boxes():
    """A_1^+ = [0.5, 2], A_2^- = [0.3, 1]"""
    return RateBoxes(plus=((0.5, 2.0),), minus=((0.3, 1.0),))


@pytest.fixture
def tight_settings():
    """Fully implicit layers with a solver tolerance well below the 1e-10 invariant checks"""
    return SolverSettings(tol=1e-12, rannacher_steps=10_000)


@pytest.fixture
def small_grid(increasing_put):
    return build_grid(increasing_put, 61, 41)


@pytest.fixture
def sample_config():
    """Small two-regime experiment, fast enough for CLI tests"""
    return {
        "model": {"type": "gbm", "sigma": [0.2, 0.4], "mu": 0.05},
        "payoff": {"type": "put", "strike": 1.0},
        "horizon": 0.5,
        "alpha": 0.05,
        "x0": 1.0,
        "y0": 1,
        "boxes": {"plus": [[0.5, 2.0]], "minus": [[0.3, 1.0]]},
        "matrix": [[-1.0, 1.0], [0.5, -0.5]],
        "grid": {"nx": 61, "nt": 41, "width_mult": 5.0},
        "mc": {"n_paths": 2000, "dt": 0.01, "seed": 11, "block_size": 1000, "n_random_challengers": 1},
        "checks": {"n_dominance_samples": 3, "per_box_samples": 2},
    }
