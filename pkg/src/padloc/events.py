"""Asynchronous event filtering and grid-based clustering.

Event streams are numpy structured arrays with the on-disk record layout
(u16 x, u16 y, u64 t_us, i8 polarity); the binary format is bit-exact for
replay determinism.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "<i1")])

_NEG = np.iinfo(np.int64).min // 4  # sentinel "long before the stream epoch"


@njit(cache=True)
def _two_stage_kernel(xs, ys, ts, ps, last, t_l, t_r, last_pol, t_n, t_k):
    """Sequential neighbor-similarity + SAE-redundancy filter pass.

    Mutates the state maps in place; returns the keep mask.  ``last`` is the
    one-pixel-padded last-timestamp map; the SAE maps are unpadded.
    """
    n = xs.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        x = xs[i] + 1
        y = ys[i] + 1
        t = ts[i]
        recent = _NEG
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dx == 0 and dy == 0:
                    continue
                v = last[y + dy, x + dx]
                if v > recent:
                    recent = v
        if t > last[y, x]:
            last[y, x] = t
        if t - recent <= t_n:
            p = ps[i]
            s = 0 if p > 0 else 1
            prev_same = t_l[s, ys[i], xs[i]]
            prev_pol = last_pol[ys[i], xs[i]]
            kept = (prev_same == _NEG or t - prev_same > t_k
                    or (prev_pol != 0 and prev_pol != p))
            t_l[s, ys[i], xs[i]] = t
            if kept:
                t_r[s, ys[i], xs[i]] = t
            last_pol[ys[i], xs[i]] = p
            keep[i] = kept
    return keep


def make_events(x, y, t, p) -> np.ndarray:
    ev = np.empty(len(x), dtype=EVENT_DTYPE)
    ev["x"], ev["y"], ev["t"], ev["p"] = x, y, t, p
    return ev


def write_events_bin(path, events: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(events, dtype=EVENT_DTYPE).tobytes())


def read_events_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return np.frombuffer(fh.read(), dtype=EVENT_DTYPE).copy()


def write_events_csv(path, events: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "t_us", "polarity"])
        for e in events:
            w.writerow([int(e["x"]), int(e["y"]), int(e["t"]), int(e["p"])])


def read_events_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        rows = [(int(a), int(b), int(c), int(d)) for a, b, c, d in r]
    return np.array(rows, dtype=EVENT_DTYPE) if rows else np.empty(0, dtype=EVENT_DTYPE)


def neighbor_filter_mask(events: np.ndarray, t_n: int, resolution) -> np.ndarray:
    """Keep mask for similarity filtering against the 8-neighborhood.

    An event survives iff the most recent earlier event at one of its eight
    neighboring pixels is at most ``t_n`` microseconds old.  Events at the
    same pixel do not count as neighbors.
    """
    w, h = resolution
    last = np.full((h + 2, w + 2), _NEG, dtype=np.int64)
    keep = np.zeros(len(events), dtype=bool)
    xs = events["x"].astype(np.int64) + 1
    ys = events["y"].astype(np.int64) + 1
    ts = events["t"].astype(np.int64)
    for i in range(len(events)):
        x, y, t = xs[i], ys[i], ts[i]
        centre = last[y, x]
        last[y, x] = _NEG
        recent = last[y - 1:y + 2, x - 1:x + 2].max()
        keep[i] = (t - recent) <= t_n
        last[y, x] = t if t > centre else centre
    return keep


def neighbor_filter(events: np.ndarray, t_n: int, resolution) -> np.ndarray:
    return events[neighbor_filter_mask(events, t_n, resolution)]


class SurfaceOfActiveEvents:
    """Per-polarity (t_l, t_r) timestamp surfaces with redundancy filtering.

    ``t_l`` tracks the latest event at each pixel; ``t_r`` only advances
    when the previous same-polarity event at the pixel is older than the
    window ``t_k`` or the last event there had the opposite polarity.
    Events that advance ``t_r`` are kept.
    """

    def __init__(self, resolution, t_k: int):
        w, h = resolution
        self.t_k = int(t_k)
        self.resolution = (w, h)
        # index 0 -> polarity +1, index 1 -> polarity -1
        self.t_l = np.full((2, h, w), _NEG, dtype=np.int64)
        self.t_r = np.full((2, h, w), _NEG, dtype=np.int64)
        self.last_polarity = np.zeros((h, w), dtype=np.int8)

    def update(self, x: int, y: int, t: int, p: int) -> bool:
        s = 0 if p > 0 else 1
        prev_same = self.t_l[s, y, x]
        prev_pol = self.last_polarity[y, x]
        kept = (prev_same == _NEG or (t - prev_same) > self.t_k
                or (prev_pol != 0 and prev_pol != p))
        self.t_l[s, y, x] = t
        if kept:
            self.t_r[s, y, x] = t
        self.last_polarity[y, x] = p
        return kept


def sae_update(sae: SurfaceOfActiveEvents, event) -> bool:
    return sae.update(int(event["x"]), int(event["y"]), int(event["t"]), int(event["p"]))


def sae_filter_mask(events: np.ndarray, sae: SurfaceOfActiveEvents) -> np.ndarray:
    keep = np.zeros(len(events), dtype=bool)
    xs = events["x"]; ys = events["y"]; ts = events["t"]; ps = events["p"]
    for i in range(len(events)):
        keep[i] = sae.update(int(xs[i]), int(ys[i]), int(ts[i]), int(ps[i]))
    return keep


class TwoStageFilter:
    """Online neighbor-similarity filter chained into the SAE filter."""

    def __init__(self, resolution, t_n: int, t_k: int):
        w, h = resolution
        self.t_n = int(t_n)
        self.last = np.full((h + 2, w + 2), _NEG, dtype=np.int64)
        self.sae = SurfaceOfActiveEvents(resolution, t_k)
        self.process(np.empty(1, dtype=EVENT_DTYPE)[:0])  # warm the kernel

    def process(self, events: np.ndarray) -> np.ndarray:
        """Keep mask after both stages, single pass."""
        return _two_stage_kernel(
            events["x"].astype(np.int64), events["y"].astype(np.int64),
            events["t"].astype(np.int64), events["p"].astype(np.int8),
            self.last, self.sae.t_l, self.sae.t_r, self.sae.last_polarity,
            self.t_n, self.sae.t_k)


@dataclass(frozen=True)
class GridConfig:
    cell_width: int = 8
    cell_height: int = 8
    interval_us: int = 5000
    activation_threshold: int = 5
    neighbor_window_us: int = 2000

    def __post_init__(self):
        if min(self.cell_width, self.cell_height, self.interval_us,
               self.activation_threshold, self.neighbor_window_us) <= 0:
            raise ValueError("all grid parameters must be strictly positive")


@dataclass(frozen=True)
class Cluster:
    """Connected component of active cells with the tight event bounding box."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    count: int
    centroid: tuple

    @property
    def bbox(self) -> tuple:
        """(cx, cy, w, h) of the tight pixel box."""
        w = self.x_max - self.x_min + 1
        h = self.y_max - self.y_min + 1
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0,
                float(w), float(h))

    @property
    def corners(self) -> tuple:
        return (float(self.x_min), float(self.y_min),
                float(self.x_max) + 1.0, float(self.y_max) + 1.0)


def grid_cluster(events: np.ndarray, cfg: GridConfig, resolution) -> list:
    """Cluster one interval of events via active-cell connected components.

    Cells reaching the activation threshold are joined by 4-connectivity;
    each component yields the tight bounding box and centroid of its member
    events.  Output is sorted by (top, left).
    """
    if len(events) == 0:
        return []
    w, h = resolution
    n_cx = (w + cfg.cell_width - 1) // cfg.cell_width
    n_cy = (h + cfg.cell_height - 1) // cfg.cell_height
    xs = events["x"].astype(np.int64)
    ys = events["y"].astype(np.int64)
    cell_x = xs // cfg.cell_width
    cell_y = ys // cfg.cell_height
    flat = cell_y * n_cx + cell_x
    counts = np.bincount(flat, minlength=n_cx * n_cy).reshape(n_cy, n_cx)
    active = counts >= cfg.activation_threshold
    if not active.any():
        return []
    labels, n_comp = ndimage.label(active, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    ev_label = labels[cell_y, cell_x]
    clusters = []
    for lab in range(1, n_comp + 1):
        sel = ev_label == lab
        if not sel.any():
            continue
        ex, ey = xs[sel], ys[sel]
        clusters.append(Cluster(
            x_min=int(ex.min()), y_min=int(ey.min()),
            x_max=int(ex.max()), y_max=int(ey.max()),
            count=int(sel.sum()),
            centroid=(float(ex.mean()), float(ey.mean()))))
    clusters.sort(key=lambda c: (c.y_min, c.x_min))
    return clusters


def iou(box_a, box_b) -> float:
    """Intersection over union of two (cx, cy, w, h) boxes."""
    ax0, ay0 = box_a[0] - box_a[2] / 2, box_a[1] - box_a[3] / 2
    ax1, ay1 = box_a[0] + box_a[2] / 2, box_a[1] + box_a[3] / 2
    bx0, by0 = box_b[0] - box_b[2] / 2, box_b[1] - box_b[3] / 2
    bx1, by1 = box_b[0] + box_b[2] / 2, box_b[1] + box_b[3] / 2
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    union = box_a[2] * box_a[3] + box_b[2] * box_b[3] - inter
    return inter / union if union > 0 else 0.0
