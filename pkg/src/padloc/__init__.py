"""Ground-based drone landing localization: event-camera and mmWave radar
cross-modal tracking with adaptive factor-graph trajectory optimization."""

__version__ = "0.1.0"

import os as _os

# single-threaded BLAS: the factor-graph systems are small enough that
# thread fan-out only adds latency jitter (no effect if numpy is already
# imported or the variables are set)
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .geometry import (CalibrationSet, CameraIntrinsics, FrameId,
                       RigidTransform, back_project_ray, project)
from .pipeline import MODES, MetricsReport, RunConfig, run_pipeline
from .simulate import (SceneConfig, TrajectorySpec, simulate_scenario,
                       read_scenario, write_scenario)

__all__ = [
    "CalibrationSet", "CameraIntrinsics", "FrameId", "RigidTransform",
    "back_project_ray", "project", "MODES", "MetricsReport", "RunConfig",
    "run_pipeline", "SceneConfig", "TrajectorySpec", "simulate_scenario",
    "read_scenario", "write_scenario", "__version__",
]
