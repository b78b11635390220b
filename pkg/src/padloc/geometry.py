"""Reference frames, rigid transforms, and the pinhole camera model.

All positions are in meters, time in integer microseconds, and pixel
coordinates use an origin at the top-left corner of the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import yaml

ORTHONORMAL_TOL = 1e-9


class FrameId(Enum):
    E = "E"  # event camera
    R = "R"  # radar
    O = "O"  # generic tracked object
    D = "D"  # drone


class PointBehindCamera(ValueError):
    """Projection requested for a point with non-positive depth."""


class OutOfImageBounds(ValueError):
    """Pixel coordinate outside the sensor resolution."""


class UnknownFrame(KeyError):
    """Transform lookup between frames not registered in the calibration."""


def _as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: x_out = rotation @ x_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = _as_vec3(self.translation).copy()
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHONORMAL_TOL * 10):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation determinant must be +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(np.eye(3), _as_vec3(t))

    def apply(self, p) -> np.ndarray:
        return self.rotation @ _as_vec3(p) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self * other)(p) == self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)


def transform_point(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def focal(self) -> tuple:
        return (self.fx, self.fy)

    @property
    def principal(self) -> tuple:
        return (self.cx, self.cy)

    @property
    def resolution(self) -> tuple:
        return (self.width, self.height)


def project(intr: CameraIntrinsics, point) -> np.ndarray:
    """Pinhole projection of a camera-frame 3D point to pixel coordinates."""
    X, Y, Z = _as_vec3(point)
    if Z <= 0:
        raise PointBehindCamera(f"depth must be positive, got Z={Z}")
    return np.array([intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy])


def back_project_ray(intr: CameraIntrinsics, pixel) -> np.ndarray:
    """Unit direction in the camera frame through a pixel."""
    x, y = np.asarray(pixel, dtype=float)
    if not (0 <= x < intr.width and 0 <= y < intr.height):
        raise OutOfImageBounds(f"pixel ({x}, {y}) outside {intr.width}x{intr.height}")
    ray = np.array([(x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0])
    return ray / np.linalg.norm(ray)


def identity_undistort(pixel: np.ndarray) -> np.ndarray:
    """Default undistortion hook: the simulator produces distortion-free events."""
    return np.asarray(pixel, dtype=float)


@dataclass
class CalibrationSet:
    """Sensor geometry shared by the whole pipeline.

    ``t_ER`` maps radar-frame points into the event-camera frame.  Axes of
    both sensors are assumed aligned unless the config supplies a rotation.
    """

    t_ER: RigidTransform
    intrinsics: CameraIntrinsics
    antenna_spacing: float
    undistort: Callable[[np.ndarray], np.ndarray] = identity_undistort
    _transforms: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.antenna_spacing <= 0:
            raise ValueError("antenna spacing must be positive")
        self.register(FrameId.R, FrameId.E, self.t_ER)

    def register(self, src: FrameId, dst: FrameId, T: RigidTransform):
        self._transforms[(src, dst)] = T
        self._transforms[(dst, src)] = T.inverse()

    def transform(self, src: FrameId, dst: FrameId) -> RigidTransform:
        if src == dst:
            return RigidTransform.identity()
        try:
            return self._transforms[(src, dst)]
        except KeyError:
            raise UnknownFrame(f"no transform registered from {src} to {dst}") from None

    @staticmethod
    def from_dict(d: dict) -> "CalibrationSet":
        cam = d["camera"]
        intr = CameraIntrinsics(fx=float(cam["fx"]), fy=float(cam["fy"]),
                                cx=float(cam["cx"]), cy=float(cam["cy"]),
                                width=int(cam["width"]), height=int(cam["height"]))
        ext = d.get("t_ER", {})
        translation = np.asarray(ext.get("translation", [0.0, 0.0, 0.0]), dtype=float)
        rotation = np.asarray(ext.get("rotation", np.eye(3).tolist()), dtype=float)
        return CalibrationSet(
            t_ER=RigidTransform(rotation, translation),
            intrinsics=intr,
            antenna_spacing=float(d["antenna_spacing"]),
        )

    @staticmethod
    def from_yaml(path) -> "CalibrationSet":
        with open(path) as fh:
            return CalibrationSet.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        return {
            "camera": {
                "fx": self.intrinsics.fx, "fy": self.intrinsics.fy,
                "cx": self.intrinsics.cx, "cy": self.intrinsics.cy,
                "width": self.intrinsics.width, "height": self.intrinsics.height,
            },
            "t_ER": {
                "translation": self.t_ER.translation.tolist(),
                "rotation": self.t_ER.rotation.tolist(),
            },
            "antenna_spacing": self.antenna_spacing,
        }

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)
