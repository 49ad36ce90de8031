"""
Тесты HTTP API.
"""
import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.schemas.experiment import ExperimentConfig, Method
from app.schemas.system import SystemSpec
from app.services.preset_service import PresetService
from main import app


@pytest.fixture
def client():
    return TestClient(app)


def _mc_config() -> dict:
    cfg = ExperimentConfig(name="api-mc", system=SystemSpec.ou(dt=0.01), method=Method.MC,
                           n_particles=20, T_f=0.5, K=2, thresholds=[0.5], seed=1)
    return cfg.model_dump(mode="json", exclude_none=True)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["presets"] == len(PresetService.names())


def test_root(client):
    assert client.get("/").status_code == 200


class TestPresets:

    def test_list(self, client):
        response = client.get("/presets/")
        assert response.status_code == 200
        names = [p["name"] for p in response.json()]
        assert names == PresetService.names()

    def test_get(self, client):
        response = client.get("/presets/ou-re")
        assert response.status_code == 200
        assert {c["method"] for c in response.json()} == {"gpa", "mc", "gev"}

    def test_unknown(self, client):
        assert client.get("/presets/nope").status_code == 404


class TestExperiments:

    def test_run_config(self, client, output_dir):
        response = client.post("/experiments/", json={"config": _mc_config()})
        assert response.status_code == 202
        run_id = response.json()["id"]

        # фоновая задача TestClient выполняется до возврата ответа
        status = client.get(f"/experiments/{run_id}").json()
        assert status["status"] == "completed"
        assert status["cost"] == {"api-mc": pytest.approx(40.0)}
        assert (output_dir / run_id / "curve.csv").exists()
        assert any(r["id"] == run_id for r in client.get("/experiments/").json())

    def test_invalid_config(self, client):
        config = _mc_config()
        config["block_sizes"] = [3]
        config["method"] = "gpa"
        response = client.post("/experiments/", json={"config": config})
        assert response.status_code == 400
        assert "tilt constant" in response.json()["detail"]

    def test_preset_and_config_together(self, client):
        response = client.post("/experiments/", json={"preset": "ou-re", "config": _mc_config()})
        assert response.status_code == 400

    def test_unknown_preset(self, client):
        assert client.post("/experiments/", json={"preset": "nope"}).status_code == 400

    def test_unknown_run(self, client):
        assert client.get("/experiments/missing").status_code == 404


class TestAnalysis:

    def test_gev_fit(self, client):
        series = np.random.default_rng(4).gumbel(0.0, 1.0, 2000).tolist()
        response = client.post("/analysis/gev-fit", json={"series": series, "block_size": 1,
                                                          "return_times": [10, 100]})
        assert response.status_code == 200
        body = response.json()
        assert body["fit"]["params"]["sigma"] == pytest.approx(1.0, abs=0.15)
        assert [lv["return_time"] for lv in body["return_levels"]] == [10, 100]

    def test_gev_fit_constant_series(self, client):
        response = client.post("/analysis/gev-fit", json={"series": [1.0] * 50})
        assert response.status_code == 400

    def test_return_curve(self, client):
        response = client.post("/analysis/return-curve",
                               json={"thresholds": [3.0, 2.0, 1.0], "probabilities": [0.1, 0.2, 0.3]})
        assert response.status_code == 200
        points = response.json()
        assert [p["threshold"] for p in points] == [3.0, 2.0, 1.0]
        assert points[-1]["probability"] == pytest.approx(0.6)

    def test_return_curve_overflow(self, client):
        response = client.post("/analysis/return-curve",
                               json={"thresholds": [2.0, 1.0], "probabilities": [0.6, 0.6]})
        assert response.status_code == 400

    def test_optimal_tilt(self, client):
        response = client.post("/analysis/tilt-oracle", json={"threshold": 2.0})
        assert response.status_code == 200
        assert 1.8 <= response.json()["C"] <= 2.4

    def test_fixed_tilt(self, client):
        response = client.post("/analysis/tilt-oracle", json={"threshold": 2.0, "C": 0.0})
        assert response.json()["rel_err_ratio"] == pytest.approx(1.0)
