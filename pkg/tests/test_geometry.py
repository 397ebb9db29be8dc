import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from patchvote.errors import InvalidDepthError
from patchvote.geometry import (CameraIntrinsics, Pose, axis_angle_to_rotation, backproject, compose,
                                exp_twist, invert, is_rotation, pose_delta, random_rotation,
                                rotation_angle_between, rotation_to_axis_angle, transform_point)

finite = st.floats(-10, 10, allow_nan=False)
unit_vectors = st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


class TestPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_nonfinite_translation(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3), [0.0, np.nan, 0.0])

    def test_arrays_are_read_only(self):
        T = Pose.identity()
        with pytest.raises(ValueError):
            T.t[0] = 1.0

    def test_matrix_round_trip(self, rng):
        T = random_pose(rng)
        U = Pose.from_matrix(T.as_matrix())
        assert np.array_equal(U.R, T.R) and np.array_equal(U.t, T.t)

    def test_apply_single_and_batch(self, rng):
        T = random_pose(rng)
        X = rng.normal(size=(5, 3))
        batch = T.apply(X)
        for x, y in zip(X, batch):
            np.testing.assert_allclose(T.apply(x), y, atol=1e-15)


class TestBackproject:
    def test_principal_ray(self):
        K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
        np.testing.assert_array_equal(backproject(0, 0, 1.0, K), [0.0, 0.0, 1.0])

    @pytest.mark.parametrize("Z", [0.1, 0.7, 3.0])
    def test_principal_point_on_axis(self, Z):
        K = CameraIntrinsics(572.4, 573.6, 325.3, 242.0)
        np.testing.assert_array_equal(backproject(K.cx, K.cy, Z, K), [0.0, 0.0, Z])

    def test_hand_evaluated(self):
        # 100 px right of the principal point at half a meter: x = 100/500 * 0.5
        K = CameraIntrinsics(500.0, 500.0, 220.0, 240.0)
        np.testing.assert_allclose(backproject(320, 240, 0.5, K), [0.1, 0.0, 0.5], atol=1e-15)

    @pytest.mark.parametrize("Z", [0.0, -1.0, np.inf, np.nan])
    def test_invalid_depth(self, Z):
        with pytest.raises(InvalidDepthError):
            backproject(10, 10, Z, CameraIntrinsics(500, 500, 320, 240))

    @given(u=st.floats(0, 640), v=st.floats(0, 480), z=st.floats(0.05, 5), k=st.floats(0.1, 10))
    def test_linear_in_depth(self, u, v, z, k):
        K = CameraIntrinsics(572.4, 573.6, 325.3, 242.0)
        np.testing.assert_allclose(backproject(u, v, k * z, K), k * backproject(u, v, z, K), rtol=1e-12)

    def test_projection_inverts_backprojection(self, rng):
        K = CameraIntrinsics(572.4, 573.6, 325.3, 242.0)
        uv = rng.uniform(0, 480, size=(50, 2))
        Z = rng.uniform(0.3, 2.0, 50)
        P = backproject(uv[:, 0], uv[:, 1], Z, K)
        np.testing.assert_allclose(K.project(P), uv, atol=1e-9)


class TestTransforms:
    def test_transform_examples(self):
        assert np.array_equal(transform_point(Pose.identity(), [1, 2, 3]), [1, 2, 3])
        assert np.array_equal(transform_point(Pose(np.eye(3), [0, 0, 1]), [0, 0, 0]), [0, 0, 1])
        Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(transform_point(Pose(Rz, np.zeros(3)), [1, 0, 0]), [0, 1, 0])

    def test_invert_identity(self):
        I = invert(Pose.identity())
        assert np.array_equal(I.R, np.eye(3)) and np.array_equal(I.t, np.zeros(3))

    def test_compose_with_inverse(self, rng):
        for _ in range(20):
            T = random_pose(rng)
            U = compose(T, invert(T))
            np.testing.assert_allclose(U.as_matrix(), np.eye(4), atol=1e-12)

    def test_compose_acts_as_nested_application(self, rng):
        A, B, C = (random_pose(rng) for _ in range(3))
        X = rng.normal(size=(10, 3))
        np.testing.assert_allclose((A @ B).apply(X), A.apply(B.apply(X)), atol=1e-14)
        np.testing.assert_allclose(((A @ B) @ C).as_matrix(), (A @ (B @ C)).as_matrix(), atol=1e-14)

    def test_long_chain_stays_orthonormal(self, rng):
        T = Pose.identity()
        for _ in range(1000):
            T = compose(T, random_pose(rng))
            if rng.random() < 0.3:
                T = invert(T)
        assert is_rotation(T.R, 1e-9)


class TestAxisAngle:
    def test_zero_angle_is_identity(self):
        assert np.array_equal(axis_angle_to_rotation([0, 1, 0], 0.0), np.eye(3))
        aa = rotation_to_axis_angle(np.eye(3))
        assert aa.degenerate and aa.angle == 0.0

    def test_quarter_turn_about_z(self):
        R = axis_angle_to_rotation([0, 0, 1], math.pi / 2)
        np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_rejects_non_unit_axis(self):
        with pytest.raises(ValueError):
            axis_angle_to_rotation([0, 0, 2], 0.3)

    def test_round_trip_many(self, rng):
        axes = rng.normal(size=(1000, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        angles = rng.uniform(1e-6, math.pi - 1e-6, 1000)
        worst = 0.0
        for a, th in zip(axes, angles):
            aa = rotation_to_axis_angle(axis_angle_to_rotation(a, th))
            worst = max(worst, abs(aa.angle - th), np.abs(aa.axis - a).max())
        assert worst < 1e-9

    @settings(max_examples=200)
    @given(axis=unit_vectors, eps=st.floats(0, 1e-7))
    def test_near_pi_branch(self, axis, eps):
        th = math.pi - eps
        aa = rotation_to_axis_angle(axis_angle_to_rotation(axis, th))
        assert abs(aa.angle - th) < 1e-9
        # at pi the axis sign is ambiguous; the rotation is not
        np.testing.assert_allclose(axis_angle_to_rotation(aa.axis, aa.angle),
                                   axis_angle_to_rotation(axis, th), atol=1e-9)

    def test_matches_scipy_rotvec(self, rng):
        from scipy.spatial.transform import Rotation

        for _ in range(100):
            R = random_rotation(rng)
            np.testing.assert_allclose(Pose(R, np.zeros(3)).rotvec(), Rotation.from_matrix(R).as_rotvec(),
                                       atol=1e-9)


class TestPoseDelta:
    def test_same_pose_is_zero(self, rng):
        T = random_pose(rng)
        d = pose_delta(T, T)
        assert d.angle == 0.0 and np.linalg.norm(d.t_err) == 0.0

    def test_pure_translation(self):
        d = pose_delta(Pose.identity(), Pose(np.eye(3), [0.1, 0, 0]))
        np.testing.assert_array_equal(d.t_err, [0.1, 0, 0])
        assert d.angle == 0.0

    def test_servo_fixture_components(self):
        # displacement of the reference servo experiment, in meters and theta*u radians
        theta_u = np.array([0.1085, 0.6422, 0.6695])
        delta = Pose.from_rotvec(theta_u, [-0.400, -0.140, -0.240])
        desired = Pose(np.eye(3), [0, 0, 0.5])
        current = invert(delta) @ desired
        d = pose_delta(current, desired)
        np.testing.assert_allclose(d.t_err * 1e3, [-400.0, -140.0, -240.0], atol=1e-9)
        np.testing.assert_allclose(d.theta_u, theta_u, atol=1e-12)
        assert d.angle == pytest.approx(np.linalg.norm(theta_u), abs=1e-12)


class TestExpTwist:
    def test_zero_twist(self):
        T = exp_twist(np.zeros(6))
        np.testing.assert_array_equal(T.as_matrix(), np.eye(4))

    def test_one_parameter_subgroup(self, rng):
        xi = rng.normal(size=6)
        half = exp_twist(xi / 2)
        np.testing.assert_allclose((half @ half).as_matrix(), exp_twist(xi).as_matrix(), atol=1e-12)

    def test_matches_matrix_exponential(self, rng):
        from scipy.linalg import expm

        for _ in range(20):
            v, w = rng.normal(size=3), rng.normal(size=3)
            A = np.zeros((4, 4))
            A[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
            A[:3, 3] = v
            np.testing.assert_allclose(exp_twist(np.r_[v, w]).as_matrix(), expm(A), atol=1e-12)

    def test_angle_between(self):
        R = axis_angle_to_rotation([1, 0, 0], 0.3)
        assert rotation_angle_between(np.eye(3), R) == pytest.approx(0.3, abs=1e-12)
