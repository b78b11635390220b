"""Measurement factors for trajectory estimation.

Each factor exposes a whitened residual and its analytic Jacobians with
respect to the connected pose variables (drone translation in the camera
frame).  The robust kernel on the reprojection factor is handled in IRLS
form: the Huber weight is computed from the current raw residual and treated
as constant during linearization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, PointBehindCamera


class InsufficientHistory(ValueError):
    """Prior factor requires two previous poses."""


class DegenerateOrigin(ValueError):
    """Direction residual undefined for a pose at the sensor origin."""


ORIGIN_EPS = 1e-6


@dataclass(frozen=True)
class NoiseModel:
    sigma_prior: float = 0.05   # m, constant-velocity prior
    sigma_et: float = 2.0       # px, bbox-center reprojection
    sigma_d: float = 0.05       # m, radar range
    sigma_v: float = 0.01       # per direction-vector component
    sigma_ue: float = 0.03      # m, radar displacement
    huber_k: float = 5.0        # px, robust kernel scale

    def __post_init__(self):
        if min(self.sigma_prior, self.sigma_et, self.sigma_d, self.sigma_v,
               self.sigma_ue, self.huber_k) <= 0:
            raise ValueError("all noise parameters must be positive")


def huber_weight(residual_norm: float, k: float) -> float:
    """IRLS weight of the Huber kernel; quadratic inside ``k``, linear beyond."""
    if residual_norm <= k:
        return 1.0
    return k / residual_norm


def residual_prior(t_i, t_im1, t_im2, sigma: float):
    """Constant-velocity prior residual: t_i - (2 t_{i-1} - t_{i-2}), whitened."""
    t_i = np.asarray(t_i, dtype=float)
    t_im1 = np.asarray(t_im1, dtype=float)
    t_im2 = np.asarray(t_im2, dtype=float)
    r = (t_i - 2.0 * t_im1 + t_im2) / sigma
    return r


def jacobian_prior(sigma: float):
    """Jacobians w.r.t. (t_i, t_{i-1}, t_{i-2})."""
    eye = np.eye(3)
    return eye / sigma, -2.0 * eye / sigma, eye / sigma


def residual_et(t_ed, x_meas, intr: CameraIntrinsics, sigma: float, huber_k: float):
    """Whitened, Huber-weighted reprojection residual of the bbox center."""
    t = np.asarray(t_ed, dtype=float)
    if t[2] <= 0:
        raise PointBehindCamera("pose depth must be positive for projection")
    proj = np.array([intr.fx * t[0] / t[2] + intr.cx,
                     intr.fy * t[1] / t[2] + intr.cy])
    raw = np.asarray(x_meas, dtype=float) - proj
    w = huber_weight(float(np.linalg.norm(raw)), huber_k)
    return np.sqrt(w) * raw / sigma


def jacobian_et(t_ed, x_meas, intr: CameraIntrinsics, sigma: float, huber_k: float):
    t = np.asarray(t_ed, dtype=float)
    if t[2] <= 0:
        raise PointBehindCamera("pose depth must be positive for projection")
    X, Y, Z = t
    dproj = np.array([[intr.fx / Z, 0.0, -intr.fx * X / Z**2],
                      [0.0, intr.fy / Z, -intr.fy * Y / Z**2]])
    proj = np.array([intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy])
    raw = np.asarray(x_meas, dtype=float) - proj
    w = huber_weight(float(np.linalg.norm(raw)), huber_k)
    return -np.sqrt(w) * dproj / sigma


def residual_rt(t_i, t_im1, distance, direction, displacement, noise: NoiseModel):
    """Radar residual: 1 range row, 3 direction rows, 3 displacement rows."""
    t = np.asarray(t_i, dtype=float)
    tp = np.asarray(t_im1, dtype=float)
    norm = float(np.linalg.norm(t))
    if norm <= ORIGIN_EPS:
        raise DegenerateOrigin("pose too close to the sensor origin")
    r = np.empty(7)
    r[0] = (norm - distance) / noise.sigma_d
    r[1:4] = (t / norm - np.asarray(direction, dtype=float)) / noise.sigma_v
    r[4:7] = ((t - tp) - np.asarray(displacement, dtype=float)) / noise.sigma_ue
    return r


def jacobian_rt(t_i, noise: NoiseModel):
    """Jacobians of the radar residual w.r.t. (t_i, t_{i-1})."""
    t = np.asarray(t_i, dtype=float)
    norm = float(np.linalg.norm(t))
    if norm <= ORIGIN_EPS:
        raise DegenerateOrigin("pose too close to the sensor origin")
    unit = t / norm
    J_i = np.zeros((7, 3))
    J_i[0, :] = unit / noise.sigma_d
    J_i[1:4, :] = (np.eye(3) - np.outer(unit, unit)) / (norm * noise.sigma_v)
    J_i[4:7, :] = np.eye(3) / noise.sigma_ue
    J_im1 = np.zeros((7, 3))
    J_im1[4:7, :] = -np.eye(3) / noise.sigma_ue
    return J_i, J_im1


@dataclass(frozen=True)
class PriorFactor:
    """Connects poses (i, i-1, i-2) through the constant-velocity model."""

    idx: tuple  # (i, i-1, i-2) variable indices

    def residual(self, values, noise: NoiseModel):
        i, im1, im2 = self.idx
        return residual_prior(values[i], values[im1], values[im2], noise.sigma_prior)

    def jacobians(self, values, noise: NoiseModel):
        return dict(zip(self.idx, jacobian_prior(noise.sigma_prior)))

    @property
    def dim(self):
        return 3


@dataclass(frozen=True)
class EtFactor:
    """Unary reprojection factor from the event-tracking bbox center."""

    idx: tuple
    x_meas: tuple
    intr: CameraIntrinsics

    def residual(self, values, noise: NoiseModel):
        return residual_et(values[self.idx[0]], self.x_meas, self.intr,
                           noise.sigma_et, noise.huber_k)

    def jacobians(self, values, noise: NoiseModel):
        return {self.idx[0]: jacobian_et(values[self.idx[0]], self.x_meas,
                                         self.intr, noise.sigma_et, noise.huber_k)}

    @property
    def dim(self):
        return 2


@dataclass(frozen=True)
class RtFactor:
    """Binary radar factor: range + direction on pose i, displacement i-1 -> i."""

    idx: tuple  # (i, i-1)
    distance: float
    direction: tuple
    displacement: tuple

    def residual(self, values, noise: NoiseModel):
        i, im1 = self.idx
        return residual_rt(values[i], values[im1], self.distance,
                           self.direction, self.displacement, noise)

    def jacobians(self, values, noise: NoiseModel):
        i, im1 = self.idx
        J_i, J_im1 = jacobian_rt(values[i], noise)
        return {i: J_i, im1: J_im1}

    @property
    def dim(self):
        return 7
