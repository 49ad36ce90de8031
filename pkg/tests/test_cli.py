"""
Тесты командной строки.
"""
import json

import numpy as np
import pandas as pd

from app.cli import EXIT_CONFIG, EXIT_METHOD, EXIT_OK, main
from app.schemas.experiment import ExperimentConfig, Method
from app.schemas.system import SystemSpec


def _write_config(tmp_path, **fields):
    values = dict(name="cli", system=SystemSpec.ou(dt=0.01), method=Method.MC, n_particles=20,
                  T_f=0.5, K=2, thresholds=[0.5], seed=2)
    values.update(fields)
    path = tmp_path / "config.yaml"
    path.write_text(ExperimentConfig(**values).to_yaml(), encoding="utf-8")
    return path


class TestPresetCommand:

    def test_list(self, capsys):
        assert main(["preset", "list"]) == EXIT_OK
        assert "ou-re" in capsys.readouterr().out

    def test_show(self, capsys):
        assert main(["preset", "show", "ou-re"]) == EXIT_OK
        assert "ou-re-gpa" in capsys.readouterr().out

    def test_show_without_name(self):
        assert main(["preset", "show"]) == EXIT_CONFIG


class TestRunCommand:

    def test_needs_preset_or_config(self):
        assert main(["run"]) == EXIT_CONFIG

    def test_runs_config(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(_write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
        assert (out / "curve.csv").exists()
        assert "cost 40" in capsys.readouterr().out

    def test_inconsistent_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("name: bad\nsystem: {kind: ou, dt: 0.01}\nmethod: gpa\nT_f: 0.5\n", encoding="utf-8")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG
        assert "tilt constant" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("name: [unclosed\n", encoding="utf-8")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_invalid_field(self, tmp_path):
        path = tmp_path / "invalid.yaml"
        path.write_text("system: {kind: ou, dt: 0.01}\nmethod: mc\nT_f: -1\n", encoding="utf-8")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_all_experiments_fail(self, tmp_path):
        config = _write_config(tmp_path, method=Method.GPA, C=[1e4], tau=0.1)
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == EXIT_METHOD


class TestAnalysisCommands:

    def test_fit_gev(self, tmp_path):
        series = tmp_path / "series.npy"
        np.save(series, np.random.default_rng(6).gumbel(0.0, 1.0, 3000))
        out = tmp_path / "fit"
        code = main(["fit-gev", "--input", str(series), "--block-size", "3", "--return-times", "10", "100",
                     "--out", str(out)])
        assert code == EXIT_OK
        payload = json.loads((out / "fit.json").read_text(encoding="utf-8"))
        assert payload["fit"]["n_maxima"] == 1000
        assert len(pd.read_csv(out / "return_levels.csv")) == 2

    def test_fit_gev_constant_series(self, tmp_path):
        series = tmp_path / "flat.txt"
        series.write_text("\n".join(["1.0"] * 40), encoding="utf-8")
        assert main(["fit-gev", "--input", str(series)]) == EXIT_METHOD

    def test_curve_from_pairs(self, tmp_path):
        pairs = tmp_path / "pairs.csv"
        pd.DataFrame({"threshold": [3.0, 2.0, 1.0], "probability": [0.1, 0.2, 0.3]}).to_csv(pairs, index=False)
        out = tmp_path / "curve.csv"
        assert main(["curve", "--input", str(pairs), "--out", str(out)]) == EXIT_OK
        frame = pd.read_csv(out)
        assert frame["threshold"].tolist() == [3.0, 2.0, 1.0]

    def test_curve_from_series(self, tmp_path):
        series = tmp_path / "series.npy"
        np.save(series, np.random.default_rng(9).standard_normal(500))
        out = tmp_path / "curve.csv"
        assert main(["curve", "--input", str(series), "--delta-t", "10", "--out", str(out)]) == EXIT_OK
        assert (pd.read_csv(out)["provenance"] == "control").all()
