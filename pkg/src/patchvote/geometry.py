"""Rigid transforms, pinhole back-projection and axis-angle conversions.

Conventions
-----------
* A :class:`Pose` ``T = (R, t)`` maps a point ``X`` to ``R @ X + t``.  When it
  describes an object pose it maps object (world) coordinates into camera
  coordinates.
* Rotations are 3x3 matrices; axis-angle only appears at the servoing
  boundary.
* All lengths are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-9
# trace(R) below -1 + this switches rotation_to_axis_angle to the symmetric branch
NEAR_PI_TRACE_EPS = 1e-6
_SMALL_ANGLE = 1e-8


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


def skew(w) -> np.ndarray:
    """Cross-product matrix: ``skew(w) @ x == np.cross(w, x)``."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def vee(S) -> np.ndarray:
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def is_rotation(R, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.linalg.norm(R.T @ R - np.eye(3), ord="fro")
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3) stored as rotation matrix ``R`` and translation ``t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R, (3, 3))
        t = _frozen(np.ravel(self.t), (3,))
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        if not is_rotation(R):
            raise ValueError("pose rotation is not in SO(3)")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        if T.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, t) -> "Pose":
        rotvec = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(rotvec))
        if angle == 0.0:
            return cls(np.eye(3), t)
        return cls(axis_angle_to_rotation(rotvec / angle, angle), t)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def rotvec(self) -> np.ndarray:
        aa = rotation_to_axis_angle(self.R)
        return aa.axis * aa.angle

    def apply(self, X) -> np.ndarray:
        """Transform one point ``(3,)`` or a batch ``(N, 3)``."""
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.t

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def inverse(self) -> "Pose":
        return invert(self)

    def __repr__(self) -> str:
        rv = np.degrees(self.rotvec())
        return f"Pose(t={np.round(self.t, 6).tolist()} m, rotvec={np.round(rv, 4).tolist()} deg)"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"intrinsic {name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def project(self, P) -> np.ndarray:
        """Pinhole projection of camera-frame points ``(N, 3)`` to pixels ``(N, 2)``."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        u = self.fx * P[:, 0] / P[:, 2] + self.cx
        v = self.fy * P[:, 1] / P[:, 2] + self.cy
        return np.column_stack([u, v])


class AxisAngle(NamedTuple):
    axis: np.ndarray
    angle: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class PoseError:
    """Servo error ``(t, theta*u)`` of a relative transform."""

    t_err: np.ndarray
    axis: np.ndarray
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "t_err", _frozen(self.t_err, (3,)))
        object.__setattr__(self, "axis", _frozen(self.axis, (3,)))
        if not 0.0 <= self.angle <= math.pi:
            raise ValueError("angle must lie in [0, pi]")

    @property
    def theta_u(self) -> np.ndarray:
        return self.angle * self.axis

    def as_vector(self) -> np.ndarray:
        """6-vector ``(t, theta*u)`` in meters and radians."""
        return np.concatenate([self.t_err, self.theta_u])

    def rotation(self) -> np.ndarray:
        return axis_angle_to_rotation(self.axis, self.angle)


def backproject(u, v, Z, K: CameraIntrinsics) -> np.ndarray:
    """Back-project pixel ``(u, v)`` at depth ``Z`` through a pinhole camera.

    Accepts scalars or equally shaped arrays; returns ``(..., 3)``.
    """
    from .errors import InvalidDepthError

    Z = np.asarray(Z, dtype=float)
    if not np.all(np.isfinite(Z)) or np.any(Z <= 0):
        raise InvalidDepthError("depth must be finite and positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x = (u - K.cx) / K.fx * Z
    y = (v - K.cy) / K.fy * Z
    return np.stack(np.broadcast_arrays(x, y, Z), axis=-1)


def transform_point(T: Pose, X) -> np.ndarray:
    return T.apply(X)


def compose(A: Pose, B: Pose) -> Pose:
    """``compose(A, B).apply(X) == A.apply(B.apply(X))``."""
    return Pose(A.R @ B.R, A.R @ B.t + A.t)


def invert(T: Pose) -> Pose:
    Rt = T.R.T
    return Pose(Rt, -(Rt @ T.t))


def axis_angle_to_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula. ``axis`` must be a unit vector."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be unit length (got norm {n:.3g})")
    if angle == 0.0:
        return np.eye(3)
    K = skew(axis)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotation_to_axis_angle(R) -> AxisAngle:
    """Inverse of :func:`axis_angle_to_rotation` with angle in ``[0, pi]``.

    The identity yields ``degenerate=True`` and an arbitrary axis.
    """
    R = np.asarray(R, dtype=float)
    tr = float(np.trace(R))
    c = max(-1.0, min(1.0, (tr - 1.0) / 2.0))
    w = vee(R - R.T) / 2.0  # sin(angle) * axis
    s = float(np.linalg.norm(w))
    angle = math.atan2(s, c)
    if angle == 0.0 or (s == 0.0 and c > 0):
        return AxisAngle(np.array([0.0, 0.0, 1.0]), 0.0, True)
    if tr < -1.0 + NEAR_PI_TRACE_EPS:
        # u u^T = (sym(R) - cos I) / (1 - cos); read the best-conditioned column
        B = ((R + R.T) / 2.0 - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(B[k, k])
        axis /= np.linalg.norm(axis)
        if axis @ w < 0:
            axis = -axis
        return AxisAngle(axis, angle)
    return AxisAngle(w / s, angle)


def pose_delta(T_current: Pose, T_desired: Pose) -> PoseError:
    """Servo error of ``dT = T_desired @ T_current^-1``.

    Bitwise-equal rotations give an exactly zero angle instead of the
    rounding residue of ``R R^T``.
    """
    if np.array_equal(T_current.R, T_desired.R):
        return PoseError(T_desired.t - T_current.t, np.array([0.0, 0.0, 1.0]), 0.0)
    dT = compose(T_desired, invert(T_current))
    aa = rotation_to_axis_angle(dT.R)
    return PoseError(dT.t.copy(), aa.axis, aa.angle)


def so3_left_jacobian(w) -> np.ndarray:
    """``V`` such that the translation of ``exp((v, w))`` is ``V @ v``."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    a = (1.0 - math.cos(theta)) / theta**2
    b = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + a * W + b * (W @ W)


def exp_twist(xi) -> Pose:
    """SE(3) exponential of a twist ``(v, w)`` (translation part first)."""
    xi = np.asarray(xi, dtype=float)
    v, w = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    R = np.eye(3) if theta == 0.0 else axis_angle_to_rotation(w / theta, theta)
    return Pose(R, so3_left_jacobian(w) @ v)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly from SO(3)."""
    return Rotation.random(random_state=rng).as_matrix()


def rotation_angle_between(Ra, Rb) -> float:
    """Geodesic angle (radians) between two rotations."""
    return rotation_to_axis_angle(np.asarray(Ra).T @ np.asarray(Rb)).angle
