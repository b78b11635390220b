"""Command line interface: simulate scenarios, run the pipeline, sweep
ablations, and export figure data."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfg_mod
from . import report as report_mod
from .geometry import CalibrationSet
from .pipeline import MODES, RunConfig, read_trajectory_csv, run_pipeline
from .radar import ChirpConfig
from .simulate import (PRESET_SCENES, TrajectorySpec, default_calibration,
                       read_scenario, simulate_scenario, write_scenario)


def _fail(code: str, message: str, exit_code: int = 1):
    click.echo(json.dumps({"error": code, "message": message}), err=True)
    sys.exit(exit_code)


def _load_calibration(path):
    if path:
        return CalibrationSet.from_yaml(path)
    return default_calibration()


def _load_params(path, overrides):
    params = cfg_mod.load_params(path) if path else cfg_mod.PipelineParams()
    parsed = {}
    for item in overrides:
        key, _, raw = item.partition("=")
        if not raw:
            _fail("BadOverride", f"override '{item}' must look like key=value")
        parsed[key] = json.loads(raw)
    return params.override(parsed) if parsed else params


@click.group()
def main():
    """Ground-based drone landing localization toolkit."""


@main.command()
@click.argument("out_dir", type=click.Path())
@click.option("--preset", default="default",
              type=click.Choice(sorted(PRESET_SCENES)), show_default=True,
              help="Scene preset controlling noise sources and distractors.")
@click.option("--speed", default=0.3, show_default=True, help="Descent speed, m/s.")
@click.option("--kind", default="vertical", show_default=True,
              type=click.Choice(["vertical", "approach_descend", "square_spiral"]))
@click.option("--start", nargs=3, type=float, default=(0.3, -0.2, 8.0),
              show_default=True)
@click.option("--end", nargs=3, type=float, default=(0.1, 0.05, 2.0),
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--calibration", type=click.Path(exists=True), default=None,
              help="Calibration YAML; defaults to the built-in rig.")
def simulate(out_dir, preset, speed, kind, start, end, seed, calibration):
    """Generate a labeled scenario directory."""
    try:
        calib = _load_calibration(calibration)
        spec = TrajectorySpec(kind=kind, start=tuple(start), end=tuple(end),
                              speed=speed)
        scene = PRESET_SCENES[preset]()
        streams = simulate_scenario(spec, scene, ChirpConfig(), calib, seed)
        write_scenario(out_dir, streams, meta={
            "preset": preset, "seed": seed, "speed": speed, "kind": kind,
            "calibration": calib.to_dict()})
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(type(exc).__name__, str(exc))
    click.echo(f"scenario written to {out_dir} "
               f"({len(streams.events)} events, {len(streams.radar)} radar)")


@main.command()
@click.argument("scenario_dir", type=click.Path(exists=True))
@click.option("--mode", default="full", type=click.Choice(MODES),
              show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Pipeline parameter YAML.")
@click.option("--set", "overrides", multiple=True,
              help="Parameter override, e.g. --set noise.sigma_et=3.0")
@click.option("--output", "-o", default="", help="Output directory.")
@click.option("--calibration", type=click.Path(exists=True), default=None)
@click.option("--seed", default=0, show_default=True)
def run(scenario_dir, mode, config_path, overrides, output, calibration, seed):
    """Run the pipeline on a scenario and print the metrics report."""
    try:
        calib = _load_calibration(calibration)
        params = _load_params(config_path, overrides)
        rc = RunConfig(calibration=calib, scenario_dir=scenario_dir,
                       params=params, mode=mode,
                       output_dir=output or str(Path(scenario_dir) / "out"),
                       seed=seed)
        art = run_pipeline(rc)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(type(exc).__name__, str(exc))
    click.echo(json.dumps(art.report.to_dict(), indent=2))


@main.command()
@click.argument("scenario_dir", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--output", "-o", default="", help="Output directory.")
@click.option("--calibration", type=click.Path(exists=True), default=None)
def ablate(scenario_dir, config_path, output, calibration):
    """Run every ablation mode and emit a comparison table."""
    try:
        calib = _load_calibration(calibration)
        params = _load_params(config_path, ())
        out = Path(output or (Path(scenario_dir) / "ablation"))
        streams = read_scenario(scenario_dir)
        reports = []
        for mode in MODES:
            rc = RunConfig(calibration=calib, scenario_dir=scenario_dir,
                           params=params, mode=mode,
                           output_dir=str(out / mode))
            art = run_pipeline(rc, streams=streams)
            reports.append(art.report)
            click.echo(f"{mode:>14}: rmse={art.report.rmse:.4f} m "
                       f"mean latency={art.report.latency_mean_us / 1000:.2f} ms")
        csv_path, png_path = report_mod.ablation_table(reports, out)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(type(exc).__name__, str(exc))
    click.echo(f"comparison written to {csv_path} and {png_path}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--scenario", type=click.Path(exists=True), default=None,
              help="Scenario directory for ground truth (trajectory figure).")
@click.option("--output", "-o", default="", help="Figure output directory.")
def plotdata(run_dir, scenario, output):
    """Export per-figure CSVs and rendered PNGs from a finished run."""
    try:
        run_path = Path(run_dir)
        timings = run_path / "timings.csv"
        rows = read_trajectory_csv(run_path / "trajectory.csv",
                                   timings if timings.exists() else None)
        out = Path(output or (run_path / "figures"))
        latencies = np.array([r.solve_time_us for r in rows])
        report_mod.latency_histogram(latencies, out)
        if scenario:
            streams = read_scenario(scenario)
            ts = np.array([r.timestamp_us for r in rows], dtype=np.int64)
            xyz = np.array([r.position for r in rows])
            from .pipeline import interpolate_truth
            sel, truth_at = interpolate_truth(streams.truth_ts,
                                              streams.truth_pos, ts)
            errors = np.linalg.norm(xyz[sel] - truth_at, axis=1)
            report_mod.error_cdf(errors, out)
            report_mod.trajectory_figure(ts, xyz, streams.truth_ts,
                                         streams.truth_pos, out)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(type(exc).__name__, str(exc))
    click.echo(f"figures written to {out}")


@main.command("write-config")
@click.argument("path", type=click.Path())
def write_config(path):
    """Write the documented default configuration file."""
    cfg_mod.write_default_config(path)
    click.echo(f"default config written to {path}")


if __name__ == "__main__":
    main()
