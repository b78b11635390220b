import numpy as np
import pytest
from hypothesis import given, strategies as st

from padloc.geometry import (CalibrationSet, CameraIntrinsics, FrameId,
                             OutOfImageBounds, PointBehindCamera,
                             RigidTransform, UnknownFrame, back_project_ray,
                             identity_undistort, project)


def rotation_from_axis_angle(axis, angle):
    """Rodrigues formula, written out independently of the library."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


INTR = CameraIntrinsics(fx=160.0, fy=160.0, cx=160.0, cy=120.0,
                        width=320, height=240)


class TestRigidTransform:
    def test_identity(self):
        p = np.array([1.0, -2.0, 3.0])
        assert np.allclose(RigidTransform.identity().apply(p), p)

    def test_apply_matches_manual(self):
        R = rotation_from_axis_angle([0, 0, 1], np.pi / 2)
        T = RigidTransform(R, [1.0, 0.0, 0.0])
        # 90 deg about z maps x-hat to y-hat, then translate
        assert np.allclose(T.apply([1, 0, 0]), [1, 1, 0], atol=1e-12)

    def test_compose_order(self):
        A = RigidTransform(rotation_from_axis_angle([1, 0, 0], 0.3), [0, 1, 0])
        B = RigidTransform(rotation_from_axis_angle([0, 1, 0], -0.7), [2, 0, 0])
        p = np.array([0.5, -0.25, 1.5])
        assert np.allclose(A.compose(B).apply(p), A.apply(B.apply(p)))

    def test_inverse_roundtrip(self):
        T = RigidTransform(rotation_from_axis_angle([1, 2, 3], 1.1),
                           [0.4, -0.2, 0.9])
        p = np.array([3.0, 1.0, -2.0])
        assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(R, np.zeros(3))

    def test_rejects_bad_translation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.eye(3), [1.0, 2.0])

    @given(st.floats(-np.pi, np.pi), st.integers(0, 2))
    def test_inverse_composes_to_identity(self, angle, axis_i):
        axis = np.eye(3)[axis_i]
        T = RigidTransform(rotation_from_axis_angle(axis, angle), [1, 2, 3])
        I = T.compose(T.inverse())
        assert np.allclose(I.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(I.translation, 0.0, atol=1e-9)


class TestCamera:
    def test_project_center(self):
        # a point on the optical axis lands on the principal point
        assert np.allclose(project(INTR, [0, 0, 4.0]), [INTR.cx, INTR.cy])

    def test_project_manual(self):
        px = project(INTR, [0.5, -0.25, 2.0])
        assert np.allclose(px, [160.0 * 0.25 + 160.0, 160.0 * -0.125 + 120.0])

    def test_project_behind_camera(self):
        with pytest.raises(PointBehindCamera):
            project(INTR, [0.0, 0.0, -1.0])
        with pytest.raises(PointBehindCamera):
            project(INTR, [0.0, 0.0, 0.0])

    def test_back_project_inverts_projection(self):
        p = np.array([0.3, -0.2, 5.0])
        ray = back_project_ray(INTR, project(INTR, p))
        assert np.allclose(ray, p / np.linalg.norm(p), atol=1e-12)

    def test_back_project_out_of_bounds(self):
        with pytest.raises(OutOfImageBounds):
            back_project_ray(INTR, [-1.0, 10.0])
        with pytest.raises(OutOfImageBounds):
            back_project_ray(INTR, [10.0, 240.0])

    def test_back_project_unit_norm(self):
        ray = back_project_ray(INTR, [7.0, 11.0])
        assert abs(np.linalg.norm(ray) - 1.0) < 1e-12

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1, fy=160, cx=160, cy=120, width=320, height=240)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=160, fy=160, cx=400, cy=120, width=320, height=240)

    def test_identity_undistort(self):
        assert np.allclose(identity_undistort([3.0, 4.0]), [3.0, 4.0])


class TestCalibrationSet:
    def _calib(self):
        return CalibrationSet(
            t_ER=RigidTransform.from_translation([0.1, 0.0, 0.0]),
            intrinsics=INTR, antenna_spacing=0.0019)

    def test_registered_transform(self):
        c = self._calib()
        p = np.array([1.0, 2.0, 3.0])
        fwd = c.transform(FrameId.R, FrameId.E).apply(p)
        assert np.allclose(fwd, p + [0.1, 0, 0])
        back = c.transform(FrameId.E, FrameId.R).apply(fwd)
        assert np.allclose(back, p)

    def test_same_frame_identity(self):
        c = self._calib()
        assert np.allclose(c.transform(FrameId.E, FrameId.E).apply([1, 2, 3]),
                           [1, 2, 3])

    def test_unknown_frame(self):
        with pytest.raises(UnknownFrame):
            self._calib().transform(FrameId.E, FrameId.D)

    def test_yaml_roundtrip(self, tmp_path):
        c = self._calib()
        path = tmp_path / "calib.yaml"
        c.to_yaml(path)
        c2 = CalibrationSet.from_yaml(path)
        assert c2.intrinsics == c.intrinsics
        assert np.allclose(c2.t_ER.translation, c.t_ER.translation)
        assert np.allclose(c2.t_ER.rotation, c.t_ER.rotation)
        assert c2.antenna_spacing == c.antenna_spacing

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            CalibrationSet(t_ER=RigidTransform.identity(), intrinsics=INTR,
                           antenna_spacing=0.0)
