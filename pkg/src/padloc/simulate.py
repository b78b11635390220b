"""Synthetic landing scenarios: ground-truth trajectories plus labeled event
streams and radar detections with configurable noise.

Every emitted event and radar detection carries a source label so the
evaluation metrics are exact rather than estimated.  Generation is fully
deterministic given (spec, scene, seed).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .events import EVENT_DTYPE, make_events, read_events_bin, write_events_bin
from .geometry import CalibrationSet, CameraIntrinsics, RigidTransform
from .radar import (ChirpConfig, RadarDetection, direction_vector,
                    preliminary_location, read_radar_csv, write_radar_csv)

EVENT_LABELS = {"drone-body": 0, "propeller": 1, "shadow": 2,
                "shot-noise": 3, "distractor": 4}
RADAR_LABELS = {"drone": 0, "ghost": 1, "distractor": 2}
DRONE_EVENT_CODES = (EVENT_LABELS["drone-body"], EVENT_LABELS["propeller"])

SPEED_CLASSES = {"slow": (0.0, 0.5), "medium": (0.5, 1.0), "rapid": (1.0, 1.5)}


class InfeasibleSpec(ValueError):
    """Trajectory speed profile violates its declared speed class."""


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "vertical"            # vertical | approach_descend | square_spiral
    start: tuple = (0.0, 0.0, 8.0)
    end: tuple = (0.0, 0.0, 2.0)
    speed: float = 0.3                # m/s nominal cruise speed
    update_rate: float = 200.0        # Hz
    speed_class: str = ""             # derived from speed when empty
    ramp_fraction: float = 0.1
    spiral_sides: int = 8             # legs for square_spiral
    spiral_shrink: float = 0.8

    def __post_init__(self):
        cls = self.speed_class or classify_speed(self.speed)
        object.__setattr__(self, "speed_class", cls)
        lo, hi = SPEED_CLASSES[cls]
        peak = self.speed / (1.0 - self.ramp_fraction)
        if not (lo <= self.speed < hi) or peak >= hi:
            raise InfeasibleSpec(
                f"speed {self.speed} m/s (peak {peak:.3f}) outside class "
                f"'{cls}' bounds [{lo}, {hi})")


def classify_speed(v: float) -> str:
    for name, (lo, hi) in SPEED_CLASSES.items():
        if lo <= v < hi:
            return name
    raise InfeasibleSpec(f"speed {v} m/s outside all landing speed classes")


def _leg_positions(p0, p1, speed, ramp_fraction, times):
    """C1 trapezoidal profile along a straight leg, sampled at ``times``
    (seconds from leg start).  Returns Nx3 positions."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    L = float(np.linalg.norm(p1 - p0))
    if L == 0.0:
        return np.tile(p0, (len(times), 1))
    T = L / speed
    r = ramp_fraction
    t_r = r * T
    v_p = speed / (1.0 - r)
    t = np.asarray(times, dtype=float)
    s = np.empty_like(t)
    accel = v_p / t_r if t_r > 0 else 0.0
    ramp = t < t_r
    s[ramp] = 0.5 * accel * t[ramp] ** 2
    cruise = (t >= t_r) & (t < T - t_r)
    s[cruise] = 0.5 * v_p * t_r + v_p * (t[cruise] - t_r)
    tail = t >= T - t_r
    td = np.minimum(T, t[tail]) - (T - t_r)
    s[tail] = L - 0.5 * v_p * t_r + (v_p * td - 0.5 * accel * td ** 2)
    s = np.clip(s, 0.0, L)
    return p0 + np.outer(s / L, p1 - p0)


def _waypoints(spec: TrajectorySpec):
    start = np.asarray(spec.start, dtype=float)
    end = np.asarray(spec.end, dtype=float)
    if spec.kind == "vertical":
        return [start, end]
    if spec.kind == "approach_descend":
        knee = np.array([end[0], end[1], start[2]])
        return [start, knee, end]
    if spec.kind == "square_spiral":
        z = start[2]
        center = np.array([end[0], end[1]])
        offset = start[:2] - center
        side = 2.0 * max(abs(offset[0]), abs(offset[1]))
        if side == 0:
            raise InfeasibleSpec("square spiral needs a lateral start offset")
        pts = [start]
        pos = start[:2].copy()
        heading = np.array([1.0, 0.0])
        length = side
        for _ in range(spec.spiral_sides):
            pos = pos + heading * length
            pts.append(np.array([pos[0], pos[1], z]))
            heading = np.array([-heading[1], heading[0]])  # turn left
            length *= spec.spiral_shrink
        return pts
    raise ValueError(f"unknown trajectory kind '{spec.kind}'")


def generate_trajectory(spec: TrajectorySpec):
    """Sample the trajectory at the update rate.

    Returns (timestamps_us int64 array, positions Nx3 float array).
    """
    pts = _waypoints(spec)
    legs = []
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        L = float(np.linalg.norm(np.asarray(b) - np.asarray(a)))
        T = L / spec.speed if L > 0 else 0.0
        legs.append((np.asarray(a, dtype=float), np.asarray(b, dtype=float), T))
        total += T
    dt = 1.0 / spec.update_rate
    if total == 0.0:
        n = 2
        ts = np.arange(n) * dt
        pos = np.tile(np.asarray(spec.start, dtype=float), (n, 1))
        return (ts * 1e6).round().astype(np.int64), pos
    times = np.arange(0.0, total + 0.5 * dt, dt)
    pos = np.empty((len(times), 3))
    leg_start = 0.0
    idx = 0
    for a, b, T in legs:
        if T == 0.0:
            continue
        leg_end = leg_start + T
        sel = (times >= leg_start) & (times <= leg_end + 1e-12)
        if idx == 0:
            pass
        pos[sel] = _leg_positions(a, b, spec.speed, spec.ramp_fraction,
                                  times[sel] - leg_start)
        leg_start = leg_end
        idx += 1
    pos[times > leg_start] = legs[-1][1]
    ts_us = (times * 1e6).round().astype(np.int64)
    return ts_us, pos


# ---------------------------------------------------------------------------
# scene model


@dataclass(frozen=True)
class MovingBall:
    """Radar-visible distractor emitting unipolar disc events."""

    center: tuple = (1.5, 0.5, 4.0)
    velocity: tuple = (-0.5, 0.0, 0.0)   # m/s
    radius: float = 0.12
    rate_per_px: float = 150.0           # ev per disc px per second
    polarity: int = 1
    emits_radar: bool = True


@dataclass(frozen=True)
class FlickerPatch:
    """Static flickering light patch: bipolar events but no radar return."""

    center_px: tuple = (60.0, 60.0)
    size_px: float = 18.0
    frequency: float = 25.0              # Hz (full on/off cycles)
    events_per_flip_per_px: float = 0.35


@dataclass(frozen=True)
class ShadowBlob:
    """Gliding unipolar blob (e.g. a bird shadow)."""

    center_px: tuple = (220.0, 40.0)
    velocity_px: tuple = (-30.0, 12.0)   # px/s
    radius_px: float = 6.0
    rate_per_px: float = 120.0           # ev/px/s
    polarity: int = 1


@dataclass(frozen=True)
class SceneConfig:
    drone_extent: tuple = (0.25, 0.36, 0.07)
    propeller_offsets: tuple = ((0.09, 0.13, 0.035), (-0.09, 0.13, 0.035),
                                (0.09, -0.13, 0.035), (-0.09, -0.13, 0.035))
    propeller_radius: float = 0.05
    propeller_rate_per_px: float = 300.0   # ev per disc px per second
    body_edge_events_per_px: float = 1.5   # events per px of edge sweep
    shot_noise_rate: float = 50_000.0      # ev/s over the full image
    shadow_blobs: tuple = ()
    flicker_patches: tuple = ()
    balls: tuple = ()
    illumination: float = 1.0
    range_noise: float = 0.03              # m, radar range std
    aoa_phase_noise: float = 0.025         # rad, per-array phase std
    ghost_probability: float = 0.1         # per chirp
    ghost_range_offset: tuple = (1.0, 0.3)  # mean/std of extra ghost range, m
    ghost_direction_jitter: float = 0.15   # std per direction cosine

    def __post_init__(self):
        if min(self.drone_extent) <= 0:
            raise ValueError("drone extent must be positive")
        if (self.propeller_rate_per_px < 0 or self.shot_noise_rate < 0
                or self.ghost_probability < 0):
            raise ValueError("rates must be non-negative")


@dataclass
class LabeledStreams:
    events: np.ndarray
    event_labels: np.ndarray
    radar: list
    radar_labels: np.ndarray
    truth_ts: np.ndarray
    truth_pos: np.ndarray


def _project_batch(intr, pts):
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    return np.stack([intr.fx * pts[:, 0] / z + intr.cx,
                     intr.fy * pts[:, 1] / z + intr.cy], axis=1)


def render_events(ts_us, poses, scene: SceneConfig, intr: CameraIntrinsics,
                  calib: CalibrationSet, seed: int):
    """Synthesize the labeled event stream for a pose sequence.

    Emits propeller (balanced polarity), body-edge (motion proportional),
    shadow, flicker, distractor-ball and shot-noise events, merged in time
    order.
    """
    rng = np.random.default_rng(seed)
    w, h = intr.width, intr.height
    centers = _project_batch(intr, poses)
    in_fov = ((centers[:, 0] >= 0) & (centers[:, 0] < w)
              & (centers[:, 1] >= 0) & (centers[:, 1] < h) & (poses[:, 2] > 0))
    if in_fov.mean() < 0.9:
        warnings.warn(f"drone inside the field of view for only "
                      f"{100 * in_fov.mean():.1f}% of poses")

    xs, ys, ts, ps, labels = [], [], [], [], []

    def emit(u, v, t, p, code):
        keep = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        if not keep.any():
            return
        xs.append(u[keep].astype(np.uint16))
        ys.append(v[keep].astype(np.uint16))
        ts.append(t[keep].astype(np.uint64))
        ps.append(p[keep].astype(np.int8))
        labels.append(np.full(int(keep.sum()), code, dtype=np.uint8))

    flip_pol = {id(f): 1 for f in scene.flicker_patches}
    offs = np.asarray(scene.propeller_offsets, dtype=float)
    half_wx = scene.drone_extent[0] / 2
    half_wy = scene.drone_extent[1] / 2

    n_steps = len(ts_us) - 1
    for k in range(n_steps):
        t0, t1 = int(ts_us[k]), int(ts_us[k + 1])
        dt = (t1 - t0) * 1e-6
        pose = poses[k]
        Z = pose[2]

        # propellers: balanced-polarity Poisson discs
        if Z > 0 and scene.propeller_rate_per_px > 0:
            for off in offs:
                c = pose + off
                if c[2] <= 0:
                    continue
                cu = intr.fx * c[0] / c[2] + intr.cx
                cv = intr.fy * c[1] / c[2] + intr.cy
                r_px = intr.fx * scene.propeller_radius / c[2]
                lam = (scene.propeller_rate_per_px * scene.illumination
                       * np.pi * r_px * r_px * dt)
                n = rng.poisson(lam)
                if n == 0:
                    continue
                ang = rng.uniform(0, 2 * np.pi, n)
                rad = r_px * np.sqrt(rng.uniform(0, 1, n))
                u = np.rint(cu + rad * np.cos(ang))
                v = np.rint(cv + rad * np.sin(ang))
                t = t0 + rng.integers(0, max(1, t1 - t0), n)
                p = rng.choice(np.array([-1, 1], dtype=np.int8), n)
                emit(u, v, t, p, EVENT_LABELS["propeller"])

        # body silhouette edges: rate proportional to image-plane edge sweep
        if Z > 0 and scene.body_edge_events_per_px > 0 and k + 1 < len(poses):
            corners = np.array([[half_wx, half_wy, 0], [-half_wx, half_wy, 0],
                                [-half_wx, -half_wy, 0], [half_wx, -half_wy, 0]])
            box0 = _project_batch(intr, pose + corners)
            box1 = _project_batch(intr, poses[k + 1] + corners)
            sweep = float(np.abs(box1 - box0).mean())
            per = float(np.abs(box0.max(0) - box0.min(0)).sum() * 2)
            lam = scene.body_edge_events_per_px * scene.illumination * per * sweep
            n = rng.poisson(lam)
            if n > 0:
                s = rng.uniform(0, 4, n)
                edge = s.astype(int) % 4
                frac = s - np.floor(s)
                a = box0[edge]
                b = box0[(edge + 1) % 4]
                pt = a + (b - a) * frac[:, None]
                u = np.rint(pt[:, 0])
                v = np.rint(pt[:, 1])
                t = t0 + rng.integers(0, max(1, t1 - t0), n)
                grow = np.sign((box1 - box0).sum()) or 1.0
                p = np.full(n, 1 if grow > 0 else -1, dtype=np.int8)
                emit(u, v, t, p, EVENT_LABELS["drone-body"])

        # gliding shadow blobs: unipolar
        for blob in scene.shadow_blobs:
            t_rel = (t0 - int(ts_us[0])) * 1e-6
            cu = blob.center_px[0] + blob.velocity_px[0] * t_rel
            cv = blob.center_px[1] + blob.velocity_px[1] * t_rel
            lam = blob.rate_per_px * np.pi * blob.radius_px ** 2 * dt
            n = rng.poisson(lam * scene.illumination)
            if n == 0:
                continue
            ang = rng.uniform(0, 2 * np.pi, n)
            rad = blob.radius_px * np.sqrt(rng.uniform(0, 1, n))
            u = np.rint(cu + rad * np.cos(ang))
            v = np.rint(cv + rad * np.sin(ang))
            t = t0 + rng.integers(0, max(1, t1 - t0), n)
            p = np.full(n, blob.polarity, dtype=np.int8)
            emit(u, v, t, p, EVENT_LABELS["shadow"])

        # flickering patches: burst of one polarity at each transition
        for patch in scene.flicker_patches:
            n_flips = rng.poisson(2 * patch.frequency * dt)
            area = patch.size_px ** 2
            for _ in range(n_flips):
                pol = flip_pol[id(patch)]
                flip_pol[id(patch)] = -pol
                n = rng.poisson(patch.events_per_flip_per_px * area
                                * scene.illumination)
                if n == 0:
                    continue
                u = np.rint(patch.center_px[0]
                            + rng.uniform(-0.5, 0.5, n) * patch.size_px)
                v = np.rint(patch.center_px[1]
                            + rng.uniform(-0.5, 0.5, n) * patch.size_px)
                t = t0 + rng.integers(0, max(1, t1 - t0), n)
                p = np.full(n, pol, dtype=np.int8)
                emit(u, v, t, p, EVENT_LABELS["distractor"])

        # moving balls: unipolar disc events, like a gliding bird
        for ball in scene.balls:
            t_rel = (t0 - int(ts_us[0])) * 1e-6
            c = np.asarray(ball.center) + np.asarray(ball.velocity) * t_rel
            if c[2] <= 0:
                continue
            cu = intr.fx * c[0] / c[2] + intr.cx
            cv = intr.fy * c[1] / c[2] + intr.cy
            r_px = intr.fx * ball.radius / c[2]
            lam = ball.rate_per_px * np.pi * r_px * r_px * dt * scene.illumination
            n = rng.poisson(lam)
            if n == 0:
                continue
            ang = rng.uniform(0, 2 * np.pi, n)
            rad = r_px * np.sqrt(rng.uniform(0, 1, n))
            u = np.rint(cu + rad * np.cos(ang))
            v = np.rint(cv + rad * np.sin(ang))
            t = t0 + rng.integers(0, max(1, t1 - t0), n)
            p = np.full(n, ball.polarity, dtype=np.int8)
            emit(u, v, t, p, EVENT_LABELS["distractor"])

        # uniform shot noise
        if scene.shot_noise_rate > 0:
            n = rng.poisson(scene.shot_noise_rate * dt)
            if n:
                u = rng.integers(0, w, n).astype(float)
                v = rng.integers(0, h, n).astype(float)
                t = t0 + rng.integers(0, max(1, t1 - t0), n)
                p = rng.choice(np.array([-1, 1], dtype=np.int8), n)
                emit(u, v, t, p, EVENT_LABELS["shot-noise"])

    if not xs:
        return np.empty(0, dtype=EVENT_DTYPE), np.empty(0, dtype=np.uint8)
    ev = make_events(np.concatenate(xs), np.concatenate(ys),
                     np.concatenate(ts), np.concatenate(ps))
    lab = np.concatenate(labels)
    order = np.argsort(ev["t"], kind="stable")
    return ev[order], lab[order]


def render_radar(ts_us, poses, scene: SceneConfig, chirp: ChirpConfig,
                 calib: CalibrationSet, seed: int):
    """Synthesize labeled radar detections at the pose update rate."""
    rng = np.random.default_rng(seed)
    t_er = calib.t_ER.translation
    R_er_inv = calib.t_ER.rotation.T
    sigma_cos = scene.aoa_phase_noise * chirp.wavelength / (2 * np.pi * chirp.antenna_spacing)

    detections, labels = [], []
    prev_pe = {}

    def measure(pos_true, ts, label, extra_range=0.0, extra_jitter=0.0, key="drone"):
        x_r = R_er_inv @ (np.asarray(pos_true) - t_er)
        dist = float(np.linalg.norm(x_r))
        if dist > chirp.max_range:
            return
        v_true = x_r / dist
        d_meas = max(0.0, dist + extra_range + rng.normal(0.0, scene.range_noise))
        jitter = np.sqrt(sigma_cos ** 2 + extra_jitter ** 2)
        cx = float(v_true[0] + rng.normal(0.0, jitter))
        cy = float(v_true[1] + rng.normal(0.0, jitter))
        s = cx * cx + cy * cy
        if s > 1.0:
            cx, cy = cx / np.sqrt(s), cy / np.sqrt(s)
        v = direction_vector(cx, cy)
        p_e = preliminary_location(d_meas, v, t_er)
        u = p_e - prev_pe.get(key, p_e)
        prev_pe[key] = p_e
        detections.append(RadarDetection(distance=d_meas, direction=v,
                                         displacement=u, timestamp=int(ts),
                                         snr=20.0))
        labels.append(RADAR_LABELS[label])

    for k in range(1, len(ts_us)):
        ts = ts_us[k]
        t_rel = (int(ts) - int(ts_us[0])) * 1e-6
        measure(poses[k], ts, "drone", key="drone")
        if scene.ghost_probability > 0 and rng.uniform() < scene.ghost_probability:
            off = abs(rng.normal(*scene.ghost_range_offset))
            measure(poses[k], ts, "ghost", extra_range=off,
                    extra_jitter=scene.ghost_direction_jitter, key="ghost")
        for i, ball in enumerate(scene.balls):
            if not ball.emits_radar:
                continue
            c = np.asarray(ball.center) + np.asarray(ball.velocity) * t_rel
            if c[2] > 0.2:
                measure(c, ts, "distractor", key=f"ball{i}")
    return detections, np.asarray(labels, dtype=np.uint8)


def simulate_scenario(spec: TrajectorySpec, scene: SceneConfig,
                      chirp: ChirpConfig, calib: CalibrationSet,
                      seed: int) -> LabeledStreams:
    ts_us, poses = generate_trajectory(spec)
    events, ev_labels = render_events(ts_us, poses, scene, calib.intrinsics,
                                      calib, seed)
    radar, radar_labels = render_radar(ts_us, poses, scene, chirp, calib,
                                       seed + 1)
    return LabeledStreams(events=events, event_labels=ev_labels, radar=radar,
                          radar_labels=radar_labels, truth_ts=ts_us,
                          truth_pos=poses)


# ---------------------------------------------------------------------------
# scenario directory I/O


def write_scenario(directory, streams: LabeledStreams, meta: dict = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_events_bin(d / "events.bin", streams.events)
    np.save(d / "event_labels.npy", streams.event_labels)
    write_radar_csv(d / "radar.csv", streams.radar)
    np.save(d / "radar_labels.npy", streams.radar_labels)
    with open(d / "truth.csv", "w") as fh:
        fh.write("timestamp_us,x,y,z\n")
        for t, p in zip(streams.truth_ts, streams.truth_pos):
            fh.write(f"{int(t)},{float(p[0])!r},{float(p[1])!r},"
                     f"{float(p[2])!r}\n")
    info = dict(meta or {})
    info["labels"] = {"event": EVENT_LABELS, "radar": RADAR_LABELS}
    with open(d / "meta.json", "w") as fh:
        json.dump(info, fh, indent=2)


class MissingStream(FileNotFoundError):
    """Scenario directory is missing a required stream file."""


def read_scenario(directory) -> LabeledStreams:
    d = Path(directory)
    for name in ("events.bin", "event_labels.npy", "radar.csv",
                 "radar_labels.npy", "truth.csv"):
        if not (d / name).exists():
            raise MissingStream(f"scenario is missing {name}")
    events = read_events_bin(d / "events.bin")
    ev_labels = np.load(d / "event_labels.npy")
    radar = read_radar_csv(d / "radar.csv")
    radar_labels = np.load(d / "radar_labels.npy")
    rows = np.loadtxt(d / "truth.csv", delimiter=",", skiprows=1, ndmin=2)
    return LabeledStreams(events=events, event_labels=ev_labels, radar=radar,
                          radar_labels=radar_labels,
                          truth_ts=rows[:, 0].astype(np.int64),
                          truth_pos=rows[:, 1:4])


# ---------------------------------------------------------------------------
# presets


def default_calibration() -> CalibrationSet:
    return CalibrationSet(
        t_ER=RigidTransform.from_translation([0.1, 0.0, 0.0]),
        intrinsics=CameraIntrinsics(fx=160.0, fy=160.0, cx=160.0, cy=120.0,
                                    width=320, height=240),
        antenna_spacing=ChirpConfig().wavelength / 2,
    )


def default_spec(speed=0.3) -> TrajectorySpec:
    return TrajectorySpec(kind="vertical", start=(0.3, -0.2, 8.0),
                          end=(0.1, 0.05, 2.0), speed=speed)


def default_scene() -> SceneConfig:
    return SceneConfig()


def distractor_scene() -> SceneConfig:
    return SceneConfig(
        shadow_blobs=(ShadowBlob(),),
        flicker_patches=(FlickerPatch(),),
        balls=(MovingBall(),),
    )


def zero_noise_scene() -> SceneConfig:
    return SceneConfig(propeller_rate_per_px=600.0,
                       body_edge_events_per_px=0.0,
                       shot_noise_rate=0.0, range_noise=0.0,
                       aoa_phase_noise=0.0, ghost_probability=0.0)


PRESET_SCENES = {"default": default_scene, "distractor": distractor_scene,
                 "zero-noise": zero_noise_scene}
