"""Constant-velocity Kalman tracking of event clusters with greedy IOU
association."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .events import Cluster, iou

# state: [cx, cy, w, h, vcx, vcy, vw, vh]; measurement: [cx, cy, w, h]
_H = np.zeros((4, 8))
_H[:4, :4] = np.eye(4)


@dataclass(frozen=True)
class TrackerConfig:
    iou_min: float = 0.1
    miss_max: int = 3
    process_noise: float = 200.0       # accel-like noise, px/s^2
    meas_noise_center: float = 1.0     # px
    meas_noise_size: float = 2.0       # px
    init_velocity_var: float = 1e4     # (px/s)^2


@dataclass(frozen=True)
class TrackState:
    track_id: int
    state: np.ndarray          # 8-vector
    covariance: np.ndarray     # 8x8
    last_update: int           # us
    misses: int = 0
    hits: int = 1

    @property
    def bbox(self) -> tuple:
        cx, cy, w, h = self.state[:4]
        return (float(cx), float(cy), float(w), float(h))

    @property
    def velocity(self) -> tuple:
        return (float(self.state[4]), float(self.state[5]))


def make_track(track_id: int, cluster: Cluster, t: int, cfg: TrackerConfig) -> TrackState:
    cx, cy = cluster.centroid
    _, _, w, h = cluster.bbox
    state = np.array([cx, cy, w, h, 0.0, 0.0, 0.0, 0.0])
    cov = np.diag([cfg.meas_noise_center**2, cfg.meas_noise_center**2,
                   cfg.meas_noise_size**2, cfg.meas_noise_size**2,
                   cfg.init_velocity_var, cfg.init_velocity_var,
                   cfg.init_velocity_var, cfg.init_velocity_var])
    return TrackState(track_id=track_id, state=state, covariance=cov,
                      last_update=t)


def _predict(track: TrackState, t: int, cfg: TrackerConfig):
    dt = max(0.0, (t - track.last_update) * 1e-6)
    F = np.eye(8)
    F[:4, 4:] = np.eye(4) * dt
    q = cfg.process_noise**2
    G = np.concatenate([np.eye(4) * dt * dt / 2, np.eye(4) * dt])
    Q = q * (G @ G.T)
    x = F @ track.state
    P = F @ track.covariance @ F.T + Q
    return x, P


def _correct(x, P, measurement, cfg: TrackerConfig):
    R = np.diag([cfg.meas_noise_center**2, cfg.meas_noise_center**2,
                 cfg.meas_noise_size**2, cfg.meas_noise_size**2])
    S = _H @ P @ _H.T + R
    K = P @ _H.T @ np.linalg.inv(S)
    x_new = x + K @ (measurement - _H @ x)
    P_new = (np.eye(8) - K @ _H) @ P
    P_new = 0.5 * (P_new + P_new.T)
    return x_new, P_new


def tracker_step(tracks, clusters, t: int, cfg: TrackerConfig = TrackerConfig(),
                 next_id: int | None = None):
    """One tracking update: predict, greedy-IOU associate, correct, spawn, prune.

    Returns (tracks, next_id).  Association is greedy by descending IOU with
    ties broken by the lower track id, then the lower cluster index.
    """
    for tr in tracks:
        if t < tr.last_update:
            raise ValueError("tracker time must be monotone")
    if next_id is None:
        next_id = max((tr.track_id for tr in tracks), default=-1) + 1

    predicted = [_predict(tr, t, cfg) for tr in tracks]
    pred_boxes = [tuple(x[:4]) for x, _ in predicted]
    cluster_meas = [np.array([c.centroid[0], c.centroid[1], c.bbox[2], c.bbox[3]])
                    for c in clusters]

    pairs = []
    for i, tr in enumerate(tracks):
        for j, c in enumerate(clusters):
            score = iou(pred_boxes[i], (c.centroid[0], c.centroid[1], c.bbox[2], c.bbox[3]))
            if score >= cfg.iou_min:
                pairs.append((-score, tr.track_id, j, i))
    pairs.sort()

    used_tracks, used_clusters = set(), set()
    assignment = {}
    for _, _, j, i in pairs:
        if i in used_tracks or j in used_clusters:
            continue
        used_tracks.add(i)
        used_clusters.add(j)
        assignment[i] = j

    out = []
    for i, tr in enumerate(tracks):
        x, P = predicted[i]
        if i in assignment:
            x, P = _correct(x, P, cluster_meas[assignment[i]], cfg)
            out.append(replace(tr, state=x, covariance=P, last_update=t,
                               misses=0, hits=tr.hits + 1))
        else:
            nt = replace(tr, state=x, covariance=P, last_update=t,
                         misses=tr.misses + 1)
            if nt.misses < cfg.miss_max:
                out.append(nt)
    for j, c in enumerate(clusters):
        if j not in used_clusters:
            out.append(make_track(next_id, c, t, cfg))
            next_id += 1
    return out, next_id


class Tracker:
    """Stateful wrapper owning the track list and id counter."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.tracks: list[TrackState] = []
        self._next_id = 0

    def step(self, clusters, t: int):
        self.tracks, self._next_id = tracker_step(
            self.tracks, clusters, t, self.cfg, self._next_id)
        return self.tracks
