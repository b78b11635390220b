"""Shared fixtures: simulated scenarios reused across test modules."""

import numpy as np
import pytest

from padloc.pipeline import RunConfig, run_pipeline
from padloc.radar import ChirpConfig
from padloc.simulate import (SceneConfig, TrajectorySpec, default_calibration,
                             distractor_scene, simulate_scenario,
                             write_scenario)


@pytest.fixture(scope="session")
def calib():
    return default_calibration()


@pytest.fixture(scope="session")
def default_streams(calib):
    """Default-noise landing: vertical descent, ~6.3 s at 200 Hz."""
    spec = TrajectorySpec(kind="vertical", start=(0.3, -0.2, 5.0),
                          end=(0.1, 0.05, 2.5), speed=0.4)
    return simulate_scenario(spec, SceneConfig(), ChirpConfig(), calib, seed=1)


@pytest.fixture(scope="session")
def default_scenario_dir(default_streams, tmp_path_factory):
    d = tmp_path_factory.mktemp("scenario-default")
    write_scenario(d, default_streams)
    return d


@pytest.fixture(scope="session")
def distractor_streams(calib):
    """Scene with three distractors: shadow blob, flicker patch, moving ball."""
    spec = TrajectorySpec(kind="vertical", start=(0.3, -0.2, 5.0),
                          end=(0.1, 0.05, 2.5), speed=0.4)
    return simulate_scenario(spec, distractor_scene(), ChirpConfig(), calib,
                             seed=2)


@pytest.fixture(scope="session")
def long_streams(calib):
    """60-second slow descent used for the drift comparison."""
    spec = TrajectorySpec(kind="vertical", start=(0.3, -0.2, 8.0),
                          end=(0.3, -0.2, 2.0), speed=0.1, update_rate=50.0)
    return simulate_scenario(spec, SceneConfig(), ChirpConfig(), calib, seed=3)


@pytest.fixture(scope="session")
def full_run(default_streams, default_scenario_dir, calib):
    """Full-pipeline artifacts on the default scenario (shared)."""
    rc = RunConfig(calibration=calib, scenario_dir=str(default_scenario_dir),
                   mode="full")
    return run_pipeline(rc, streams=default_streams)


def rmse_of(artifacts):
    return artifacts.report.rmse
