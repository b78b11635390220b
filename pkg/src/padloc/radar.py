"""FMCW radar model: IF-signal synthesis, range estimation, dual-array AoA,
preliminary 3D location, and frame-to-frame displacement tracking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class RangeOutOfBand(ValueError):
    """Requested range outside the unambiguous interval of the chirp."""


class NoPeak(ValueError):
    """Range spectrum carries no peak above the noise floor."""


class AmbiguousSpacing(ValueError):
    """Antenna spacing above half a wavelength makes AoA ambiguous."""


class InconsistentAngles(ValueError):
    """cos^2(theta_x) + cos^2(theta_y) exceeds one."""


class NonMonotoneTime(ValueError):
    """Detection timestamps must be strictly increasing."""


@dataclass(frozen=True)
class ChirpConfig:
    """Chirp and virtual-array parameters.

    Defaults: 77 GHz start frequency, slope and ADC rate chosen so a 256-point
    range FFT covers 30 m of unambiguous range with ~23 cm bins.
    """

    f_c: float = 77e9           # Hz
    slope: float = 2.5e13       # Hz/s
    sample_rate: float = 1e7    # Hz
    n_samples: int = 256
    antenna_spacing: float = 0.0  # m; 0 -> half wavelength
    attenuation: float = 1.0
    scene_radius: float = 20.0  # m, used only for the ambiguity check

    def __post_init__(self):
        if self.slope <= 0 or self.sample_rate <= 0:
            raise ValueError("slope and sample rate must be positive")
        n = self.n_samples
        if n <= 0 or (n & (n - 1)) != 0:
            raise ValueError("n_samples must be a power of two")
        if self.antenna_spacing == 0.0:
            object.__setattr__(self, "antenna_spacing", self.wavelength / 2)
        if self.max_range <= self.scene_radius:
            raise ValueError(
                f"max unambiguous range {self.max_range:.2f} m does not cover "
                f"the scene radius {self.scene_radius:.2f} m")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def max_range(self) -> float:
        return SPEED_OF_LIGHT * self.sample_rate / (4 * self.slope)

    @property
    def range_bin(self) -> float:
        """Range resolution of one FFT bin."""
        return SPEED_OF_LIGHT * self.sample_rate / (2 * self.slope * self.n_samples)


@dataclass(frozen=True)
class IFSignal:
    samples: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class RadarDetection:
    """One radar measurement: range, direction, displacement since previous."""

    distance: float
    direction: np.ndarray
    displacement: np.ndarray
    timestamp: int
    snr: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        u = np.asarray(self.displacement, dtype=float)
        if self.distance < 0:
            raise ValueError("distance must be non-negative")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if v[2] < 0:
            raise ValueError("direction must point into the upper half-space")
        object.__setattr__(self, "direction", v)
        object.__setattr__(self, "displacement", u)


def mix_to_if(cfg: ChirpConfig, true_range, timestamp: int = 0) -> IFSignal:
    """Forward model of the mixed and low-pass-filtered chirp return.

    ``true_range`` may be a scalar or an iterable of scatterer ranges; the
    mixer is linear so returns superpose additively.
    """
    ranges = np.atleast_1d(np.asarray(true_range, dtype=float))
    for r in ranges:
        if not (0 <= r < cfg.max_range):
            raise RangeOutOfBand(f"range {r} outside [0, {cfg.max_range:.2f})")
    t = np.arange(cfg.n_samples) / cfg.sample_rate
    f_if = 2 * cfg.slope * ranges / SPEED_OF_LIGHT
    samples = cfg.attenuation * np.exp(2j * np.pi * np.outer(f_if, t)).sum(axis=0)
    return IFSignal(samples=samples, timestamp=timestamp)


def estimate_range(cfg: ChirpConfig, sig: IFSignal, floor_factor: float = 6.0) -> float:
    """Dominant range-FFT peak, refined by 3-point quadratic interpolation."""
    s = sig.samples
    if len(s) != cfg.n_samples:
        raise ValueError("signal length must equal n_samples")
    mags = np.abs(np.fft.fft(s))
    k = int(np.argmax(mags))
    peak = mags[k]
    floor = floor_factor * float(np.median(mags)) + 1e-12
    if peak <= floor:
        raise NoPeak("no spectral peak above the noise floor")
    n = cfg.n_samples
    m_prev, m_next = mags[(k - 1) % n], mags[(k + 1) % n]
    denom = m_prev - 2 * peak + m_next
    delta = 0.0 if denom == 0 else 0.5 * (m_prev - m_next) / denom
    f_if = (k + delta) * cfg.sample_rate / n
    return SPEED_OF_LIGHT * f_if / (2 * cfg.slope)


def estimate_aoa(phase_diff: float, cfg: ChirpConfig) -> float:
    """Direction cosine from the inter-antenna phase difference."""
    if cfg.antenna_spacing > cfg.wavelength / 2 + 1e-12:
        raise AmbiguousSpacing("antenna spacing exceeds half a wavelength")
    if abs(phase_diff) > np.pi:
        raise ValueError("phase difference must be within [-pi, pi]")
    cos_theta = phase_diff * cfg.wavelength / (2 * np.pi * cfg.antenna_spacing)
    return float(np.clip(cos_theta, -1.0, 1.0))


def direction_vector(cos_x: float, cos_y: float) -> np.ndarray:
    """Unit direction from the two orthogonal-array direction cosines."""
    s = cos_x * cos_x + cos_y * cos_y
    if s > 1 + 1e-9:
        raise InconsistentAngles(f"cos^2 sum {s} exceeds 1")
    return np.array([cos_x, cos_y, np.sqrt(max(0.0, 1.0 - s))])


def preliminary_location(distance: float, direction, t_ER) -> np.ndarray:
    """Object position in the event-camera frame: D*v + t_ER."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    return distance * np.asarray(direction, dtype=float) + np.asarray(t_ER, dtype=float)


@dataclass(frozen=True)
class RadarTrack:
    """Displacement-integrated object track in the camera frame."""

    t_EO: np.ndarray
    history: tuple = ()
    noise_w: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "t_EO", np.asarray(self.t_EO, dtype=float))


def radar_track_update(track: RadarTrack, p_now, p_prev, timestamp: int) -> RadarTrack:
    """Integrate one frame-to-frame displacement into the track.

    The measurement-noise terms of the tracking model live in the factor
    noise, not here: the tracker sums raw displacements only.
    """
    if track.history and timestamp <= track.history[-1][0]:
        raise NonMonotoneTime(f"timestamp {timestamp} not after {track.history[-1][0]}")
    displacement = np.asarray(p_now, dtype=float) - np.asarray(p_prev, dtype=float)
    new_t = track.t_EO + displacement
    return replace(track, t_EO=new_t, history=track.history + ((timestamp, new_t),))


RADAR_CSV_HEADER = ["timestamp_us", "D", "vx", "vy", "vz", "Ux", "Uy", "Uz", "snr"]


def write_radar_csv(path, detections):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RADAR_CSV_HEADER)
        for d in detections:
            w.writerow([d.timestamp, repr(float(d.distance)),
                        *(repr(float(x)) for x in d.direction),
                        *(repr(float(x)) for x in d.displacement),
                        repr(float(d.snr))])


def read_radar_csv(path):
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != RADAR_CSV_HEADER:
            raise ValueError(f"unexpected radar CSV header: {header}")
        for row in r:
            out.append(RadarDetection(
                timestamp=int(row[0]), distance=float(row[1]),
                direction=np.array([float(row[2]), float(row[3]), float(row[4])]),
                displacement=np.array([float(row[5]), float(row[6]), float(row[7])]),
                snr=float(row[8])))
    return out
