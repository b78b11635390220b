"""Single structured configuration surface for the pipeline.

Every tunable named by the processing stages (filter windows, grid cells,
micro-motion thresholds, factor noise, adaptive triggers) is one named key
in a YAML file; ``write_default_config`` documents the defaults inline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .consistency import ConsistencyConfig
from .events import GridConfig
from .factors import NoiseModel
from .optimizer import AdaptiveConfig
from .tracking import TrackerConfig


@dataclass(frozen=True)
class EventFilterConfig:
    neighbor_window_us: int = 3000  # T_n
    sae_window_us: int = 500        # T_k


@dataclass
class PipelineParams:
    event_filter: EventFilterConfig = field(default_factory=EventFilterConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)

    def override(self, dotted: dict) -> "PipelineParams":
        """Apply {'section.key': value} overrides, returning a new instance."""
        out = PipelineParams(**{f.name: getattr(self, f.name)
                                for f in fields(self)})
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            sub = getattr(out, section)
            if not hasattr(sub, name):
                raise KeyError(f"unknown parameter '{key}'")
            setattr(out, section, replace(sub, **{name: value}))
        return out


_SECTIONS = ("event_filter", "grid", "tracker", "consistency", "noise",
             "adaptive")


def params_to_dict(p: PipelineParams) -> dict:
    out = {}
    for section in _SECTIONS:
        sub = getattr(p, section)
        out[section] = {f.name: getattr(sub, f.name) for f in fields(sub)}
    return out


def params_from_dict(d: dict) -> PipelineParams:
    base = PipelineParams()
    kwargs = {}
    for section in _SECTIONS:
        sub = getattr(base, section)
        data = dict(d.get(section, {}))
        kwargs[section] = replace(sub, **data) if data else sub
    return PipelineParams(**kwargs)


def load_params(path) -> PipelineParams:
    with open(path) as fh:
        return params_from_dict(yaml.safe_load(fh) or {})


def save_params(path, p: PipelineParams):
    with open(path, "w") as fh:
        yaml.safe_dump(params_to_dict(p), fh, sort_keys=False)


DEFAULT_CONFIG_TEXT = """\
# Pipeline configuration. All keys are optional; absent keys use the
# defaults shown here.

event_filter:
  neighbor_window_us: 3000    # T_n: max age of the nearest 8-neighbor event
  sae_window_us: 500          # T_k: same-pixel same-polarity refractory window

grid:
  cell_width: 8               # c_w, px
  cell_height: 8              # c_h, px
  interval_us: 5000           # c_dt: clustering window, also the SAE clock
  activation_threshold: 5     # c_thres: events per cell to mark it active
  neighbor_window_us: 2000

tracker:
  iou_min: 0.1                # minimum IOU to associate a cluster
  miss_max: 3                 # consecutive misses before a track is dropped
  process_noise: 200.0        # constant-velocity process noise, px/s^2
  meas_noise_center: 1.0      # px
  meas_noise_size: 2.0        # px
  init_velocity_var: 10000.0

consistency:
  gate_radius: 0.5            # m: point-to-ray gate for radar alignment
  bin_size: 5                 # px: micro-motion histogram bins
  window_us: 20000            # micro-motion accumulation window
  count_min: 30               # events per bin to qualify as propeller
  balance_tol: 0.15           # tolerance around 0.5 positive fraction

noise:
  sigma_prior: 0.05           # m, constant-velocity prior
  sigma_et: 2.0               # px, reprojection of the bbox center
  sigma_d: 0.05               # m, radar range
  sigma_v: 0.01               # per direction-vector component
  sigma_ue: 0.03              # m, radar frame-to-frame displacement
  huber_k: 5.0                # px, robust kernel scale

adaptive:
  delta: 0.01                 # m, per-variable relinearization trigger
  l_threshold: 3              # triggered variables forcing a full update
  norm_delta: 0.05            # m, total-change trigger
  window: 50                  # free poses kept after a full update
"""


def write_default_config(path):
    Path(path).write_text(DEFAULT_CONFIG_TEXT)
