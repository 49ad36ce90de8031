"""
Общие фикстуры тестов.
"""
import numpy as np
import pytest

from app.config import settings
from app.core.rng import StreamFactory
from app.schemas.system import Observable, SystemSpec
from app.schemas.tilt import TiltConfig, WeightForm


@pytest.fixture
def ou_spec() -> SystemSpec:
    return SystemSpec.ou(lam=1.0, sigma=1.0, dt=0.01)


@pytest.fixture
def l96_spec() -> SystemSpec:
    return SystemSpec.lorenz96(sites=8, forcing=8.0, dt=0.01, epsilon=1e-3)


@pytest.fixture
def position() -> Observable:
    return Observable.position()


@pytest.fixture
def streams() -> StreamFactory:
    return StreamFactory(seed=7, experiment=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def gpa_tilt():
    def make(C: float, tau: float = 0.1, T_f: float = 1.0) -> TiltConfig:
        return TiltConfig(C=C, weight_form=WeightForm.END_VALUE_DIFFERENCE, tau=tau, T_f=T_f)
    return make


@pytest.fixture
def gklt_tilt():
    def make(C: float, tau: float = 0.1, T_f: float = 1.0) -> TiltConfig:
        return TiltConfig(C=C, weight_form=WeightForm.INTEGRATED_OBSERVABLE, tau=tau, T_f=T_f)
    return make


@pytest.fixture
def fast_l96(monkeypatch):
    """Короткий разгон Lorenz '96 для тестов."""
    monkeypatch.setattr(settings, "l96_spinup_time", 2.0)
    monkeypatch.setattr(settings, "l96_max_chains", 16)
    return settings


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "output_dir", tmp_path / "results")
    return tmp_path / "results"
