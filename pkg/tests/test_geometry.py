"""Rigid transforms, projection, and rotation parameterization.

Oracles here are independent re-computations: explicit matrix-vector
products for transforms, the textbook pinhole formula for projection, and
exp/log round trips for the rotation maps.
"""

import numpy as np
import pytest

from votepose import (
    BehindCamera,
    CameraIntrinsics,
    InvalidRotation,
    Pose,
    compose,
    inverse,
    project,
    rotation_angle_between,
    rotation_exp,
    rotation_log,
    transform_points,
)
from votepose.geometry import skew


def random_rotation(rng, scale=np.pi * 0.9):
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * rng.uniform(0.0, scale)
    return rotation_exp(w)


class TestPose:
    def test_accepts_proper_rotation(self, rng):
        R = random_rotation(rng)
        p = Pose(R, [1.0, 2.0, 3.0])
        assert p.translation.shape == (3,)

    def test_rejects_non_orthonormal(self):
        R = np.eye(3)
        R[0, 1] = 1e-3
        with pytest.raises(InvalidRotation):
            Pose(R, np.zeros(3))

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InvalidRotation):
            Pose(R, np.zeros(3))

    def test_dict_round_trip(self, rng):
        p = Pose(random_rotation(rng), rng.normal(size=3))
        q = Pose.from_dict(p.to_dict())
        np.testing.assert_allclose(q.rotation, p.rotation)
        np.testing.assert_allclose(q.translation, p.translation)


class TestTransforms:
    def test_transform_matches_matrix_oracle(self, rng):
        p = Pose(random_rotation(rng), rng.normal(size=3))
        x = rng.normal(size=(10, 3))
        expected = np.array([p.rotation @ xi + p.translation for xi in x])
        np.testing.assert_allclose(transform_points(p, x), expected, atol=1e-12)

    def test_single_point_shape(self, rng):
        p = Pose(random_rotation(rng), rng.normal(size=3))
        out = transform_points(p, np.array([1.0, 0.0, 0.0]))
        assert out.shape == (3,)

    def test_compose_equals_sequential(self, rng):
        a = Pose(random_rotation(rng), rng.normal(size=3))
        b = Pose(random_rotation(rng), rng.normal(size=3))
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(
            transform_points(compose(a, b), x),
            transform_points(a, transform_points(b, x)),
            atol=1e-12,
        )

    def test_inverse_round_trip(self, rng):
        p = Pose(random_rotation(rng), rng.normal(size=3))
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(
            transform_points(inverse(p), transform_points(p, x)), x, atol=1e-12
        )


class TestProjection:
    def test_matches_pinhole_formula(self, rng):
        intr = CameraIntrinsics(500.0, 510.0, 320.0, 240.0, 640, 480)
        p = Pose(random_rotation(rng), np.array([0.1, -0.2, 5.0]))
        x = rng.uniform(-0.5, 0.5, size=(20, 3))
        uv = project(intr, p, x)
        cam = transform_points(p, x)
        for i in range(len(x)):
            assert uv[i, 0] == pytest.approx(intr.fx * cam[i, 0] / cam[i, 2] + intr.cx)
            assert uv[i, 1] == pytest.approx(intr.fy * cam[i, 1] / cam[i, 2] + intr.cy)

    def test_no_clamping_to_image(self):
        # points projecting far outside the image keep their coordinates
        intr = CameraIntrinsics(100.0, 100.0, 16.0, 16.0, 32, 32)
        p = Pose(np.eye(3), np.array([5.0, 0.0, 1.0]))
        uv = project(intr, p, np.zeros((1, 3)))
        assert uv[0, 0] > 100.0

    def test_behind_camera_raises(self):
        intr = CameraIntrinsics(100.0, 100.0, 16.0, 16.0, 32, 32)
        p = Pose(np.eye(3), np.array([0.0, 0.0, -1.0]))
        with pytest.raises(BehindCamera):
            project(intr, p, np.zeros((1, 3)))

    def test_zero_depth_raises(self):
        intr = CameraIntrinsics(100.0, 100.0, 16.0, 16.0, 32, 32)
        p = Pose(np.eye(3), np.zeros(3))
        with pytest.raises(BehindCamera):
            project(intr, p, np.zeros((1, 3)))


class TestRotationMaps:
    def test_exp_log_round_trip(self, rng):
        for _ in range(50):
            w = rng.normal(size=3)
            w = w / np.linalg.norm(w) * rng.uniform(1e-8, np.pi - 1e-4)
            np.testing.assert_allclose(rotation_log(rotation_exp(w)), w, atol=1e-10)

    def test_tiny_angle_series_branch(self):
        w = np.array([1e-14, -2e-14, 5e-15])
        R = rotation_exp(w)
        np.testing.assert_allclose(R, np.eye(3) + skew(w), atol=1e-15)

    def test_exp_zero_is_identity(self):
        np.testing.assert_allclose(rotation_exp(np.zeros(3)), np.eye(3))

    def test_log_near_pi(self):
        w = np.array([0.0, 0.0, np.pi - 1e-7])
        back = rotation_log(rotation_exp(w))
        assert np.linalg.norm(back) == pytest.approx(np.pi - 1e-7, abs=1e-6)
        np.testing.assert_allclose(back / np.linalg.norm(back), [0, 0, 1], atol=1e-5)

    def test_skew_antisymmetric(self, rng):
        w = rng.normal(size=3)
        S = skew(w)
        np.testing.assert_allclose(S, -S.T)
        np.testing.assert_allclose(S @ w, np.zeros(3), atol=1e-15)


class TestAngleBetween:
    def test_zero_for_identical(self, rng):
        R = random_rotation(rng)
        assert rotation_angle_between(R, R) == 0.0

    def test_recovers_known_angle(self):
        Rb = rotation_exp(np.array([0.0, 0.7, 0.0]))
        assert rotation_angle_between(np.eye(3), Rb) == pytest.approx(0.7, abs=1e-12)

    def test_symmetric(self, rng):
        Ra, Rb = random_rotation(rng), random_rotation(rng)
        assert rotation_angle_between(Ra, Rb) == pytest.approx(
            rotation_angle_between(Rb, Ra), abs=1e-12
        )

    def test_tiny_angles_resolved(self):
        # must resolve angles well below the arccos noise floor (~5e-8)
        Rb = rotation_exp(np.array([1e-9, 0.0, 0.0]))
        assert rotation_angle_between(np.eye(3), Rb) == pytest.approx(1e-9, rel=1e-4)
