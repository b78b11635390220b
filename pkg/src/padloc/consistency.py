"""Cross-modal consistency filtering: radar-to-bbox ray alignment and the
propeller micro-motion score that singles out the landing drone."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, OutOfImageBounds, back_project_ray


@dataclass(frozen=True)
class ConsistencyConfig:
    gate_radius: float = 0.5       # m, point-to-ray gate
    bin_size: int = 5              # px, micro-motion histogram bins
    window_us: int = 20000         # micro-motion accumulation window
    count_min: int = 30            # events per bin to qualify
    balance_tol: float = 0.15      # |positive fraction - 0.5| tolerance


@dataclass(frozen=True)
class AlignedObservation:
    track_id: int
    center: np.ndarray        # bbox center, px
    radar_point: np.ndarray   # m, frame E
    radar_index: int          # index into the window's radar point list
    ray_distance: float
    timestamp: int


@dataclass(frozen=True)
class MicroMotionScore:
    track_id: int
    bin_counts: np.ndarray
    positive_fraction: np.ndarray
    propeller_bin_count: int
    window: tuple
    total_events: int


def point_to_ray_distance(point, ray) -> float:
    """Perpendicular distance from a point to the half-line along ``ray``."""
    p = np.asarray(point, dtype=float)
    r = np.asarray(ray, dtype=float)
    s = float(p @ r)
    if s <= 0:
        return float(np.linalg.norm(p))
    return float(np.linalg.norm(p - s * r))


def align(tracks, radar_points, intr: CameraIntrinsics,
          cfg: ConsistencyConfig = ConsistencyConfig(),
          timestamp: int = 0, undistort=None) -> list:
    """Pair each track's back-projected ray with its nearest gated radar point.

    Tracks with no radar point inside the gate are treated as noise and
    dropped; each radar point is used by at most one track (closest wins,
    ties by the lower track id).
    """
    points = [np.asarray(p, dtype=float) for p in radar_points]
    candidates = []
    for tr in tracks:
        center = np.array(tr.bbox[:2])
        if undistort is not None:
            center = undistort(center)
        try:
            ray = back_project_ray(intr, center)
        except OutOfImageBounds:
            continue
        for j, p in enumerate(points):
            d = point_to_ray_distance(p, ray)
            if d <= cfg.gate_radius:
                candidates.append((d, tr.track_id, j, center))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    used_tracks, used_points = set(), set()
    out = []
    for d, tid, j, center in candidates:
        if tid in used_tracks or j in used_points:
            continue
        used_tracks.add(tid)
        used_points.add(j)
        out.append(AlignedObservation(track_id=tid, center=center,
                                      radar_point=points[j], radar_index=j,
                                      ray_distance=d, timestamp=timestamp))
    out.sort(key=lambda o: o.track_id)
    return out


def micro_motion_score(events, bbox, window, track_id: int = 0,
                       cfg: ConsistencyConfig = ConsistencyConfig()) -> MicroMotionScore:
    """Score a track by its count of balanced-polarity high-rate bins.

    Propeller rotation produces many events of both polarities inside a
    spatial bin; background motion and noise are predominantly unipolar.
    """
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("micro-motion window must have positive length")
    cx, cy, w, h = bbox
    x0, x1 = cx - w / 2, cx + w / 2
    y0, y1 = cy - h / 2, cy + h / 2
    if len(events) == 0:
        return MicroMotionScore(track_id, np.zeros((0, 0)), np.zeros((0, 0)), 0,
                                (t0, t1), 0)
    xs = events["x"].astype(np.float64)
    ys = events["y"].astype(np.float64)
    ts = events["t"].astype(np.int64)
    sel = (ts >= t0) & (ts < t1) & (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    if not sel.any():
        return MicroMotionScore(track_id, np.zeros((0, 0)), np.zeros((0, 0)), 0,
                                (t0, t1), 0)
    bx = ((xs[sel] - x0) // cfg.bin_size).astype(np.int64)
    by = ((ys[sel] - y0) // cfg.bin_size).astype(np.int64)
    pos = events["p"][sel] > 0
    n_bx = int(bx.max()) + 1
    n_by = int(by.max()) + 1
    flat = by * n_bx + bx
    counts = np.bincount(flat, minlength=n_bx * n_by).reshape(n_by, n_bx)
    pos_counts = np.bincount(flat[pos], minlength=n_bx * n_by).reshape(n_by, n_bx)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(counts > 0, pos_counts / np.maximum(counts, 1), 0.0)
    balanced = np.abs(frac - 0.5) <= cfg.balance_tol
    propeller = (counts >= cfg.count_min) & balanced
    return MicroMotionScore(track_id=track_id, bin_counts=counts,
                            positive_fraction=frac,
                            propeller_bin_count=int(propeller.sum()),
                            window=(t0, t1), total_events=int(sel.sum()))


def select_drone(aligned, scores):
    """Pick the aligned observation with the strongest propeller signature.

    Ties break by the larger total event count, then by the lower track id;
    returns None when no track shows any propeller bins.
    """
    by_id = {s.track_id: s for s in scores}
    best = None
    best_key = None
    for obs in aligned:
        s = by_id.get(obs.track_id)
        if s is None or s.propeller_bin_count == 0:
            continue
        key = (-s.propeller_bin_count, -s.total_events, obs.track_id)
        if best_key is None or key < best_key:
            best_key = key
            best = obs
    return best


def diagnostic_record(timestamp, aligned, scores, chosen) -> dict:
    by_id = {s.track_id: s for s in scores}
    return {
        "timestamp_us": int(timestamp),
        "tracks": [
            {
                "track_id": int(o.track_id),
                "ray_distance": float(o.ray_distance),
                "propeller_bins": int(by_id[o.track_id].propeller_bin_count)
                if o.track_id in by_id else 0,
                "total_events": int(by_id[o.track_id].total_events)
                if o.track_id in by_id else 0,
            }
            for o in aligned
        ],
        "chosen_track_id": int(chosen.track_id) if chosen is not None else None,
    }


def write_diagnostics(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
