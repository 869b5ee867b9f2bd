"""Shared fixtures: small seeded ensembles and a throwaway output directory."""

import numpy as np
import pytest

from src.coefficients import builtin_model
from src.measures import EmpiricalMeasure
from src.noise import generate_noise
from src.scheme import SchemeConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return SchemeConfig(horizon_T=1.0, steps_M=20, particles_N=400, master_seed=7)


@pytest.fixture
def small_noise(small_config):
    return generate_noise(small_config.master_seed, small_config.particles_N, small_config.steps_M)


@pytest.fixture
def dirac_one(small_config):
    return EmpiricalMeasure.dirac(1.0, small_config.particles_N)


@pytest.fixture
def gbm_down():
    return builtin_model("gbm", 0.05, 1.0)


@pytest.fixture
def gbm_up():
    return builtin_model("gbm", 0.15, 1.0)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("MCV_LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.delenv("MCV_OUT_DIR", raising=False)
    monkeypatch.delenv("MCV_THREADS", raising=False)
    return tmp_path / "out"
