"""End-to-end pipeline runner: replays a scenario through the cross-modal
tracking stage and the trajectory optimizer, then computes metrics."""

from __future__ import annotations

import csv
import gc
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineParams
from .consistency import (AlignedObservation, align, diagnostic_record,
                          micro_motion_score, select_drone, write_diagnostics)
from .events import TwoStageFilter, grid_cluster
from .factors import EtFactor, PriorFactor, RtFactor
from .geometry import CalibrationSet
from .optimizer import AdaptiveSolver, inter_sae_track
from .radar import preliminary_location
from .simulate import (DRONE_EVENT_CODES, RADAR_LABELS, LabeledStreams,
                       MissingStream, read_scenario)
from .tracking import Tracker

MODES = ("full", "radar-only", "event-only", "no-CCT", "no-adaptive",
         "interSAE-only")


class _StopWatch:
    """Per-update timer accumulating compute (thread CPU) and wall time."""

    def __init__(self):
        self.cpu_ns = 0
        self.wall_ns = 0

    def start(self):
        self._cpu = time.thread_time_ns()
        self._wall = time.perf_counter_ns()

    def stop(self):
        self.cpu_ns += time.thread_time_ns() - self._cpu
        self.wall_ns += time.perf_counter_ns() - self._wall

    @property
    def cpu_us(self):
        return self.cpu_ns / 1000.0

    @property
    def wall_us(self):
        return self.wall_ns / 1000.0


def _gc_paused(iterable):
    """Iterate with cyclic garbage collection paused (latency measurement)."""
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield from iterable
    finally:
        if enabled:
            gc.enable()


class CalibrationMismatch(ValueError):
    """Scenario streams do not fit the calibration (e.g. resolution)."""


class EmptyOverlap(ValueError):
    """Trajectory and ground truth share no time interval."""


@dataclass
class RunConfig:
    calibration: CalibrationSet
    scenario_dir: str
    params: PipelineParams = field(default_factory=PipelineParams)
    mode: str = "full"
    output_dir: str = ""
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown ablation mode '{self.mode}'")
        if self.overrides:
            self.params = self.params.override(self.overrides)


@dataclass
class MetricsReport:
    mode: str
    n_updates: int
    mean_error: float
    rmse: float
    p50_error: float
    p90_error: float
    p99_error: float
    per_axis_mae: tuple
    # compute-only latency (thread CPU time); wall-clock reported separately
    # because it includes scheduler preemption unrelated to the pipeline
    latency_mean_us: float
    latency_p50_us: float
    latency_p99_us: float
    wall_latency_mean_us: float
    wall_latency_p50_us: float
    wall_latency_p99_us: float
    event_recall: float
    event_precision: float
    radar_recall: float
    radar_precision: float
    selection_accuracy: float

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["per_axis_mae"] = [float(x) for x in self.per_axis_mae]
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


@dataclass
class TrajectoryRow:
    timestamp_us: int
    position: np.ndarray
    mode: str          # interSAE | local
    iterations: int
    solve_time_us: float


def write_trajectory_csv(path, rows):
    # timing lives in timings.csv so the trajectory is run-to-run identical
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_us", "x", "y", "z", "mode", "iterations"])
        for r in rows:
            w.writerow([r.timestamp_us, repr(float(r.position[0])),
                        repr(float(r.position[1])), repr(float(r.position[2])),
                        r.mode, r.iterations])


def write_timings_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_us", "solve_time_us"])
        for r in rows:
            w.writerow([r.timestamp_us, f"{r.solve_time_us:.1f}"])


def read_trajectory_csv(path, timings_path=None):
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            rows.append(TrajectoryRow(
                timestamp_us=int(row[0]),
                position=np.array([float(row[1]), float(row[2]), float(row[3])]),
                mode=row[4], iterations=int(row[5]),
                solve_time_us=0.0))
    if timings_path is not None:
        with open(timings_path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row_obj, row in zip(rows, r):
                row_obj.solve_time_us = float(row[1])
    return rows


@dataclass
class RunArtifacts:
    rows: list
    report: MetricsReport
    diagnostics: list
    event_kept: np.ndarray
    radar_selected: np.ndarray


def run_pipeline(cfg: RunConfig, streams: LabeledStreams = None) -> RunArtifacts:
    """Replay one scenario through the configured pipeline mode.

    Returns the artifacts; when ``cfg.output_dir`` is set, also writes
    trajectory.csv, metrics.json and diagnostics.jsonl there.
    """
    if streams is None:
        streams = read_scenario(cfg.scenario_dir)
    calib = cfg.calibration
    intr = calib.intrinsics
    p = cfg.params
    mode = cfg.mode

    ev = streams.events
    if len(ev) and (int(ev["x"].max()) >= intr.width
                    or int(ev["y"].max()) >= intr.height):
        raise CalibrationMismatch("event coordinates exceed camera resolution")

    truth_ts = streams.truth_ts
    t_er = calib.t_ER.translation
    radar_by_ts = {}
    for idx, det in enumerate(streams.radar):
        radar_by_ts.setdefault(det.timestamp, []).append(idx)

    stage = TwoStageFilter((intr.width, intr.height),
                           p.event_filter.neighbor_window_us,
                           p.event_filter.sae_window_us)
    tracker = Tracker(p.tracker)
    event_kept = np.zeros(len(ev), dtype=bool)
    radar_selected = np.zeros(len(streams.radar), dtype=bool)
    selection_correct = []
    diagnostics = []
    rows = []
    latencies = []
    wall_latencies = []

    # trailing buffer of kept events for micro-motion scoring
    buffer = []
    buffer_span = p.consistency.window_us

    solver = None
    plain_poses = []   # interSAE-only
    pose_ts = []
    prev_pe = None
    ev_t = ev["t"].astype(np.int64)

    use_et = mode != "radar-only"
    use_rt = mode != "event-only"

    for k in _gc_paused(range(1, len(truth_ts))):
        t0, t1 = int(truth_ts[k - 1]), int(truth_ts[k])
        i0, i1 = np.searchsorted(ev_t, [t0, t1], side="right")
        window = ev[i0:i1]

        watch = _StopWatch()
        watch.start()

        if mode == "no-CCT":
            kept = window
            event_kept[i0:i1] = True
        else:
            mask = stage.process(window)
            event_kept[i0:i1] = mask
            kept = window[mask]
        if len(kept):
            buffer.append(kept)
        while buffer and int(buffer[0]["t"][-1]) < t1 - buffer_span:
            buffer.pop(0)

        clusters = grid_cluster(kept, p.grid, (intr.width, intr.height))
        tracks = tracker.step(clusters, t1)

        det_idx = radar_by_ts.get(t1, [])
        points = [preliminary_location(streams.radar[j].distance,
                                       streams.radar[j].direction, t_er)
                  for j in det_idx]
        aligned = align(tracks, points, intr, p.consistency, timestamp=t1,
                        undistort=calib.undistort)

        chosen = None
        if mode == "no-CCT":
            chosen = min(aligned, key=lambda o: o.ray_distance, default=None)
        elif aligned:
            recent = (np.concatenate(buffer) if buffer
                      else kept[:0])
            track_by_id = {tr.track_id: tr for tr in tracks}
            scores = [micro_motion_score(recent, track_by_id[o.track_id].bbox,
                                         (t1 - buffer_span, t1 + 1),
                                         track_id=o.track_id, cfg=p.consistency)
                      for o in aligned]
            chosen = select_drone(aligned, scores)
            diagnostics.append(diagnostic_record(t1, aligned, scores, chosen))

        watch.stop()

        if chosen is None:
            latencies.append(watch.cpu_us)
            wall_latencies.append(watch.wall_us)
            continue

        global_idx = det_idx[chosen.radar_index]
        radar_selected[global_idx] = True
        selection_correct.append(
            streams.radar_labels[global_idx] == RADAR_LABELS["drone"])

        watch.start()

        # camera-frame range/bearing of the selected radar point
        pe = chosen.radar_point
        dist = float(np.linalg.norm(pe))
        direction = pe / dist
        disp = pe - prev_pe if prev_pe is not None else np.zeros(3)
        prev_pe = pe

        n_poses = len(plain_poses) if mode == "interSAE-only" else (
            len(solver.values) if solver is not None else 0)

        if n_poses < 2:
            # seed poses straight from the preliminary radar location
            if mode == "interSAE-only":
                plain_poses.append(pe.copy())
            else:
                if solver is None:
                    force_full = mode == "no-adaptive"
                    solver = AdaptiveSolver(p.noise, p.adaptive,
                                            force_full=force_full)
                solver.seed([pe])
            pose_ts.append(t1)
            watch.stop()
            latencies.append(watch.cpu_us)
            wall_latencies.append(watch.wall_us)
            rows.append(TrajectoryRow(t1, pe.copy(), "interSAE", 0,
                                      watch.cpu_us))
            continue

        values = plain_poses if mode == "interSAE-only" else solver.values
        t_im1, t_im2 = values[-1], values[-2]
        t_hat, _, iters = inter_sae_track(
            t_im1, t_im2, p.noise, intr=intr,
            x_meas=chosen.center if use_et else None,
            distance=dist if use_rt else None,
            direction=direction if use_rt else None,
            displacement=disp if use_rt else None)

        if mode == "interSAE-only":
            plain_poses.append(t_hat)
            pose_ts.append(t1)
            watch.stop()
            latencies.append(watch.cpu_us)
            wall_latencies.append(watch.wall_us)
            rows.append(TrajectoryRow(t1, t_hat, "interSAE", iters,
                                      watch.cpu_us))
            continue

        i = len(solver.values)
        factors = [PriorFactor(idx=(i, i - 1, i - 2))]
        if use_et:
            factors.append(EtFactor(idx=(i,), x_meas=tuple(chosen.center),
                                    intr=intr))
        if use_rt:
            factors.append(RtFactor(idx=(i, i - 1), distance=dist,
                                    direction=tuple(direction),
                                    displacement=tuple(disp)))
        info = solver.add_step(t_hat, factors)
        pose_ts.append(t1)
        watch.stop()
        latencies.append(watch.cpu_us)
        wall_latencies.append(watch.wall_us)
        rows.append(TrajectoryRow(
            t1, solver.estimate(i), "local" if info.full_update else "interSAE",
            iters + info.iterations, watch.cpu_us))

    # final smoothed positions for poses that were refined while in-window
    if mode != "interSAE-only" and solver is not None:
        for r, g in zip(rows, range(len(solver.values))):
            r.position = solver.estimate(g)

    report = compute_metrics(
        traj_ts=np.array([r.timestamp_us for r in rows], dtype=np.int64),
        traj_xyz=np.array([r.position for r in rows]).reshape(-1, 3),
        truth_ts=truth_ts, truth_xyz=streams.truth_pos,
        event_labels=streams.event_labels, event_kept=event_kept,
        radar_labels=streams.radar_labels, radar_selected=radar_selected,
        selection_correct=np.asarray(selection_correct, dtype=bool),
        latencies_us=np.asarray(latencies),
        wall_latencies_us=np.asarray(wall_latencies), mode=mode)

    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(out / "trajectory.csv", rows)
        write_timings_csv(out / "timings.csv", rows)
        report.to_json(out / "metrics.json")
        write_diagnostics(out / "diagnostics.jsonl", diagnostics)

    return RunArtifacts(rows=rows, report=report, diagnostics=diagnostics,
                        event_kept=event_kept, radar_selected=radar_selected)


def interpolate_truth(truth_ts, truth_xyz, query_ts):
    lo, hi = truth_ts[0], truth_ts[-1]
    sel = (query_ts >= lo) & (query_ts <= hi)
    if not sel.any():
        raise EmptyOverlap("trajectory does not overlap the ground truth")
    out = np.empty((int(sel.sum()), 3))
    for a in range(3):
        out[:, a] = np.interp(query_ts[sel].astype(float),
                              truth_ts.astype(float), truth_xyz[:, a])
    return sel, out


def compute_metrics(traj_ts, traj_xyz, truth_ts, truth_xyz, event_labels,
                    event_kept, radar_labels, radar_selected,
                    selection_correct, latencies_us, wall_latencies_us=None,
                    mode="full") -> MetricsReport:
    """Exact label-based metrics plus localization error statistics."""
    if len(traj_ts) == 0:
        raise EmptyOverlap("empty trajectory")
    sel, truth_at = interpolate_truth(truth_ts, truth_xyz, traj_ts)
    diff = traj_xyz[sel] - truth_at
    err = np.linalg.norm(diff, axis=1)

    ev_drone = np.isin(event_labels, DRONE_EVENT_CODES)
    kept_total = int(event_kept.sum())
    kept_drone = int((event_kept & ev_drone).sum())
    ev_recall = kept_drone / max(1, int(ev_drone.sum()))
    ev_precision = kept_drone / max(1, kept_total)

    rd_drone = radar_labels == RADAR_LABELS["drone"]
    sel_total = int(radar_selected.sum())
    sel_drone = int((radar_selected & rd_drone).sum())
    rd_recall = sel_drone / max(1, int(rd_drone.sum()))
    rd_precision = sel_drone / max(1, sel_total)

    acc = (float(selection_correct.mean()) if len(selection_correct) else 0.0)
    lat = latencies_us if len(latencies_us) else np.zeros(1)
    if wall_latencies_us is None:
        wall_latencies_us = lat
    wall = wall_latencies_us if len(wall_latencies_us) else np.zeros(1)

    return MetricsReport(
        mode=mode, n_updates=len(traj_ts),
        mean_error=float(err.mean()),
        rmse=float(np.sqrt((err ** 2).mean())),
        p50_error=float(np.percentile(err, 50)),
        p90_error=float(np.percentile(err, 90)),
        p99_error=float(np.percentile(err, 99)),
        per_axis_mae=tuple(np.abs(diff).mean(axis=0)),
        latency_mean_us=float(lat.mean()),
        latency_p50_us=float(np.percentile(lat, 50)),
        latency_p99_us=float(np.percentile(lat, 99)),
        wall_latency_mean_us=float(wall.mean()),
        wall_latency_p50_us=float(np.percentile(wall, 50)),
        wall_latency_p99_us=float(np.percentile(wall, 99)),
        event_recall=float(ev_recall), event_precision=float(ev_precision),
        radar_recall=float(rd_recall), radar_precision=float(rd_precision),
        selection_accuracy=acc)
