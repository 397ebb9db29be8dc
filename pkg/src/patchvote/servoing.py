"""Position-based visual servoing simulated against a pose estimator.

Conventions: an object pose ``T = cTo`` maps object to camera coordinates and
the camera itself is tracked as ``W = oTc``.  The error of the current view
with respect to the desired one is ``dT = T* T^-1`` (current camera in the
desired camera frame), reduced to ``(t, theta*u)``.  The control law

    v = -gain * (R t ; theta*u),   R = dR^T

is a twist in the current camera frame.  Under an exact estimator the camera
centre then follows the straight line to its goal and both error parts decay
by exactly ``1 - gain*dt`` per step.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DivergenceError
from .geometry import Pose, PoseError, exp_twist, pose_delta

Estimator = Callable[[Pose], Pose]

TRAJECTORY_CSV_HEADER = [
    "step", "time_s",
    "err_tx_mm", "err_ty_mm", "err_tz_mm", "err_rx_rad", "err_ry_rad", "err_rz_rad",
    "vx_mm_s", "vy_mm_s", "vz_mm_s", "wx_rad_s", "wy_rad_s", "wz_rad_s",
    "px_mm", "py_mm", "pz_mm",
]


@dataclass(frozen=True)
class ServoConfig:
    """Control and simulation settings (SI units).

    ``noise_t``/``noise_r`` are per-axis standard deviations of the simulated
    estimator; both zero means an exact estimator.  Divergence is declared
    when the error norm exceeds ``divergence_factor`` times its running
    minimum, never comparing against less than ``divergence_floor``.
    """

    gain: float = 0.5
    dt: float = 0.01
    max_steps: int = 5000
    tol_t: float = 1e-3
    tol_r: float = np.deg2rad(0.1)
    noise_t: float = 0.0
    noise_r: float = 0.0
    seed: int = 0
    divergence_factor: float = 2.0
    divergence_floor: float = 0.01

    def __post_init__(self):
        if not self.gain > 0:
            raise ConfigError("servo gain must be positive")
        if not self.dt > 0:
            raise ConfigError("servo dt must be positive")
        if not self.gain * self.dt < 1:
            raise ConfigError(f"gain*dt = {self.gain * self.dt:g} must be < 1 for a stable discrete loop",
                              hint="lower the gain or the timestep")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if not (self.tol_t > 0 and self.tol_r > 0):
            raise ConfigError("convergence tolerances must be positive")
        if self.noise_t < 0 or self.noise_r < 0:
            raise ConfigError("estimator noise must be non-negative")
        if not self.divergence_factor > 1:
            raise ConfigError("divergence factor must exceed 1")

    @property
    def exact(self) -> bool:
        return self.noise_t == 0 and self.noise_r == 0


@dataclass(eq=False)
class ServoTrajectory:
    camera_poses: list = field(default_factory=list)   # W_k = oTc per step
    velocities: list = field(default_factory=list)     # 6-vectors, current camera frame
    errors: list = field(default_factory=list)         # estimated (t, theta*u)
    true_errors: list = field(default_factory=list)    # ground-truth (t, theta*u)
    dt: float = 0.01
    converged: bool = False

    @property
    def steps(self) -> int:
        """Number of control steps actually applied."""
        return len(self.camera_poses) - 1

    def __len__(self) -> int:
        return len(self.camera_poses)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def positions(self) -> np.ndarray:
        return np.array([W.t for W in self.camera_poses])

    def error_array(self, true: bool = False) -> np.ndarray:
        return np.array(self.true_errors if true else self.errors)

    @property
    def final_translation_error(self) -> float:
        return float(np.linalg.norm(self.true_errors[-1][:3]))

    @property
    def final_rotation_error(self) -> float:
        return float(np.linalg.norm(self.true_errors[-1][3:]))


def pbvs_velocity(delta: PoseError, R, gain: float) -> np.ndarray:
    """Camera twist ``-gain * (R t ; theta*u)``, translation first."""
    R = np.asarray(R, dtype=float)
    return -gain * np.concatenate([R @ delta.t_err, delta.theta_u])


def integrate_camera(W: Pose, v, dt: float) -> Pose:
    """Move camera ``W = oTc`` by the body-frame twist ``v`` held for ``dt``."""
    return W @ exp_twist(np.asarray(v, dtype=float) * dt)


def initial_from_delta(delta: Pose, desired: Pose) -> Pose:
    """Object pose whose servo error relative to ``desired`` is ``delta``."""
    return delta.inverse() @ desired


def exact_estimator(T: Pose) -> Pose:
    return T


def noisy_estimator(noise_t: float, noise_r: float, seed: int = 0) -> Estimator:
    """Perturb the true pose by Gaussian translation and small-rotation noise."""
    rng = np.random.default_rng([seed, 5])

    def estimate(T: Pose) -> Pose:
        dt_ = rng.normal(0.0, noise_t, 3) if noise_t > 0 else np.zeros(3)
        dr = rng.normal(0.0, noise_r, 3) if noise_r > 0 else np.zeros(3)
        return Pose.from_rotvec(dr, dt_) @ T

    return estimate


def _within(e: np.ndarray, cfg: ServoConfig) -> bool:
    return bool(np.linalg.norm(e[:3]) < cfg.tol_t and np.linalg.norm(e[3:]) < cfg.tol_r)


def run_servo(initial: Pose, desired: Pose, cfg: ServoConfig = ServoConfig(),
              estimator: Estimator | None = None) -> ServoTrajectory:
    """Close the loop estimate -> error -> velocity -> camera motion.

    ``initial`` and ``desired`` are object poses in the camera frame.  The
    default estimator is exact, or noisy when the config carries noise.
    """
    if estimator is None:
        estimator = exact_estimator if cfg.exact else noisy_estimator(cfg.noise_t, cfg.noise_r, cfg.seed)
    # the object frame is the world; the camera starts at oTc = T^-1
    W = initial.inverse()
    traj = ServoTrajectory(dt=cfg.dt)
    running_min = np.inf
    for k in range(cfg.max_steps + 1):
        T_true = W.inverse()
        delta = pose_delta(estimator(T_true), desired)
        e = delta.as_vector()
        traj.camera_poses.append(W)
        traj.errors.append(e)
        traj.true_errors.append(pose_delta(T_true, desired).as_vector())
        if _within(e, cfg):
            traj.velocities.append(np.zeros(6))
            traj.converged = True
            return traj
        norm = float(np.linalg.norm(e))
        running_min = min(running_min, norm)
        if norm > cfg.divergence_factor * max(running_min, cfg.divergence_floor):
            traj.velocities.append(np.zeros(6))
            raise DivergenceError(
                f"servo error grew to {norm:.4g} from a minimum of {running_min:.4g} at step {k}",
                trajectory=traj)
        if k == cfg.max_steps:
            traj.velocities.append(np.zeros(6))
            break
        v = pbvs_velocity(delta, delta.rotation().T, cfg.gain)
        traj.velocities.append(v)
        W = integrate_camera(W, v, cfg.dt)
    return traj


def format_trajectory(traj: ServoTrajectory) -> str:
    """CSV text: mm and mm/s for translations, rad and rad/s for rotations."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    scale = np.array([1e3, 1e3, 1e3, 1.0, 1.0, 1.0])
    buf = io.StringIO()
    buf.write(",".join(TRAJECTORY_CSV_HEADER) + "\n")
    for k, (W, v, e) in enumerate(zip(traj.camera_poses, traj.velocities, traj.errors)):
        vals = [k * traj.dt, *(e * scale), *(v * scale), *(W.t * 1e3)]
        buf.write(str(k) + "," + ",".join(f"{x:.9g}" for x in vals) + "\n")
    return buf.getvalue()


def parse_trajectory_csv(text: str) -> np.ndarray:
    """Numeric rows of a trajectory CSV as an array (header checked)."""
    lines = text.strip().splitlines()
    if not lines or lines[0].split(",") != TRAJECTORY_CSV_HEADER:
        raise ValueError("not a trajectory CSV")
    return np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])


def export_trajectory(traj: ServoTrajectory, path, svg_path=None) -> None:
    """Write the trajectory CSV and, optionally, the three-panel SVG."""
    text = format_trajectory(traj)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    if svg_path is not None:
        from .plotting import trajectory_plot

        data = parse_trajectory_csv(text)
        trajectory_plot(svg_path, data[:, 1], data[:, 2:8], data[:, 8:14], data[:, 14:17])
