import json

import numpy as np
import pytest
from click.testing import CliRunner

from padloc.cli import main
from padloc.config import PipelineParams, load_params
from padloc.simulate import write_scenario


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def scenario_dir(default_streams, tmp_path_factory):
    d = tmp_path_factory.mktemp("cli-scenario")
    write_scenario(d, default_streams)
    return d


def error_payload(result):
    return json.loads(result.stderr.strip().splitlines()[-1])


class TestSimulate:
    def test_writes_scenario(self, runner, tmp_path):
        out = tmp_path / "scen"
        res = runner.invoke(main, ["simulate", str(out), "--speed", "0.4",
                                   "--start", "0.2", "-0.1", "3.0",
                                   "--end", "0.1", "0.0", "2.5",
                                   "--seed", "3"])
        assert res.exit_code == 0, res.output
        for name in ("events.bin", "radar.csv", "truth.csv", "meta.json"):
            assert (out / name).exists()

    def test_infeasible_speed_fails_with_json(self, runner, tmp_path):
        res = runner.invoke(main, ["simulate", str(tmp_path / "x"),
                                   "--speed", "0.49"])
        assert res.exit_code == 1
        err = error_payload(res)
        assert err["error"] == "InfeasibleSpec"
        assert "0.49" in err["message"]

    def test_unknown_preset_rejected(self, runner, tmp_path):
        res = runner.invoke(main, ["simulate", str(tmp_path / "x"),
                                   "--preset", "nope"])
        assert res.exit_code != 0


class TestRun:
    def test_reports_metrics(self, runner, scenario_dir, tmp_path):
        res = runner.invoke(main, ["run", str(scenario_dir),
                                   "-o", str(tmp_path / "out")])
        assert res.exit_code == 0, res.output
        rep = json.loads(res.output)
        assert rep["mode"] == "full"
        assert rep["rmse"] < 0.2
        assert (tmp_path / "out" / "trajectory.csv").exists()

    def test_missing_scenario(self, runner, tmp_path):
        res = runner.invoke(main, ["run", str(tmp_path)])
        assert res.exit_code == 1
        assert error_payload(res)["error"] == "MissingStream"

    def test_bad_override(self, runner, scenario_dir):
        res = runner.invoke(main, ["run", str(scenario_dir),
                                   "--set", "noise.bogus=1.0"])
        assert res.exit_code == 1
        assert error_payload(res)["error"] == "KeyError"

    def test_malformed_override(self, runner, scenario_dir):
        res = runner.invoke(main, ["run", str(scenario_dir), "--set", "oops"])
        assert res.exit_code == 1
        assert error_payload(res)["error"] == "BadOverride"

    def test_override_changes_result(self, runner, scenario_dir, tmp_path):
        res = runner.invoke(main, ["run", str(scenario_dir), "--mode",
                                   "radar-only", "-o", str(tmp_path / "o1"),
                                   "--set", "noise.sigma_d=0.5"])
        assert res.exit_code == 0, res.output
        assert json.loads(res.output)["mode"] == "radar-only"


class TestPlotdata:
    def test_figures_written(self, runner, scenario_dir, tmp_path):
        run_dir = tmp_path / "run"
        res = runner.invoke(main, ["run", str(scenario_dir),
                                   "-o", str(run_dir)])
        assert res.exit_code == 0, res.output
        figs = tmp_path / "figs"
        res = runner.invoke(main, ["plotdata", str(run_dir),
                                   "--scenario", str(scenario_dir),
                                   "-o", str(figs)])
        assert res.exit_code == 0, res.output
        for stem in ("latency_hist", "error_cdf", "trajectory"):
            assert (figs / f"{stem}.csv").exists()
            assert (figs / f"{stem}.png").exists()
        # figure CSV matches the run trajectory
        data = np.loadtxt(figs / "trajectory.csv", delimiter=",", skiprows=1)
        assert data.shape[1] == 4

    def test_without_scenario_only_latency(self, runner, scenario_dir,
                                           tmp_path):
        run_dir = tmp_path / "run"
        runner.invoke(main, ["run", str(scenario_dir), "-o", str(run_dir)])
        figs = tmp_path / "figs2"
        res = runner.invoke(main, ["plotdata", str(run_dir), "-o", str(figs)])
        assert res.exit_code == 0, res.output
        assert (figs / "latency_hist.png").exists()
        assert not (figs / "error_cdf.png").exists()


def test_write_config_roundtrip(runner, tmp_path):
    path = tmp_path / "cfg.yaml"
    res = runner.invoke(main, ["write-config", str(path)])
    assert res.exit_code == 0
    assert load_params(path) == PipelineParams()


def test_ablate(runner, scenario_dir, tmp_path):
    out = tmp_path / "ablate"
    res = runner.invoke(main, ["ablate", str(scenario_dir), "-o", str(out)])
    assert res.exit_code == 0, res.output
    assert (out / "ablation.csv").exists()
    assert (out / "ablation.png").exists()
    lines = (out / "ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 7  # header + six modes
