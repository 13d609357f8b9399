"""
Shared fixtures for spde-lab tests
"""

import numpy as np
import pytest

from spde_lab.config import settings
from spde_lab.services.galerkin_sde import SimConfig
from spde_lab.services.noise_model import KappaSpec, NoiseOperator
from spde_lab.spectral import build_space, shear_mode


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Keep every test's outputs in its own temporary root and run inline"""
    monkeypatch.setattr(settings, "output_root", str(tmp_path / "runs"))
    monkeypatch.setattr(settings, "workers", 1)
    monkeypatch.setattr(settings, "debug", False)
    monkeypatch.setattr(settings, "max_nested_paths", 20_000_000)


@pytest.fixture
def space1():
    return build_space(1)


@pytest.fixture
def space2():
    return build_space(2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


@pytest.fixture
def make_cfg():
    """Factory for small simulation configurations"""

    def factory(
        cutoff: int = 1,
        dt: float = 1e-2,
        T: float = 0.5,
        c: float = 0.05,
        alpha: float = 1.3,
        nonlinear: bool = True,
        seed: int = 7,
        variant: str = "multiplier",
        guard: float = 1e6,
        workers: int = 1,
    ) -> SimConfig:
        space = build_space(cutoff)
        noise = NoiseOperator(space, alpha=alpha, c=c, kappa=KappaSpec(variant=variant))
        return SimConfig(
            space=space, dt=dt, T=T, noise=noise, seed=seed, nonlinear=nonlinear, guard=guard, workers=workers,
        )

    return factory


@pytest.fixture
def sim_cfg(make_cfg):
    return make_cfg()


@pytest.fixture
def ou_cfg(make_cfg):
    """Additive noise, no nonlinearity: the Ornstein-Uhlenbeck instance"""
    return make_cfg(c=0.0, nonlinear=False)


@pytest.fixture
def shear(space1):
    return shear_mode(space1, (1, 0, 0), (0.0, 1.0, 0.0), 0.5)
