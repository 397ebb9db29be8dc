"""3D-3D rigid registration: weighted Procrustes, robust IRLS and point-to-point ICP."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError
from .geometry import Pose
from .keypoints import PointCloud

DEGENERACY_RATIO = 1e-12
TUKEY_C = 4.685
MAD_TO_SIGMA = 1.4826
# residual scales below this (meters) are rounding noise, not signal
SCALE_FLOOR = 1e-9
MAX_LMEDS_SUBSETS = 500


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    pose: Pose
    rms: float
    residuals: np.ndarray
    iterations: int = 1
    weights: np.ndarray | None = None
    history: list = field(default_factory=list)
    converged: bool = True
    fallback: bool = False


def _check_pairs(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[1] != 3 or X.shape != Y.shape:
        raise ValueError(f"correspondences must be matching (N, 3) arrays, got {X.shape} and {Y.shape}")
    if len(X) < 3:
        raise ValueError("at least 3 correspondences are required")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("correspondences must be finite")
    return X, Y


def _residuals(pose: Pose, X, Y) -> np.ndarray:
    return np.linalg.norm(pose.apply(X) - Y, axis=1)


def _result(pose, X, Y, **kw) -> RegistrationResult:
    r = _residuals(pose, X, Y)
    return RegistrationResult(pose, float(np.sqrt(np.mean(r * r))), r, **kw)


def _kabsch(X, Y, w) -> Pose:
    sw = w.sum()
    xc = w @ X / sw
    yc = w @ Y / sw
    H = (X - xc).T @ ((Y - yc) * w[:, None])
    U, S, Vt = np.linalg.svd(H)
    if not S[0] > 0 or S[1] < DEGENERACY_RATIO * S[0]:
        raise DegenerateGeometryError(
            "correspondences are collinear or coincident; rotation is not determined",
            stage="registration", hint="use keypoints that span a plane")
    V = Vt.T
    d = 1.0 if np.linalg.det(V @ U.T) > 0 else -1.0
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, yc - R @ xc)


def procrustes_svd(X, Y, weights=None) -> RegistrationResult:
    """Rigid ``T`` minimizing ``sum_j w_j |T X_j - Y_j|^2`` in closed form.

    Reflections are corrected so the rotation always has determinant +1.
    """
    X, Y = _check_pairs(X, Y)
    if weights is None:
        w = np.ones(len(X))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(X),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite, non-negative and one per pair")
        if not w.sum() > 0:
            raise DegenerateGeometryError("all correspondence weights are zero", stage="registration")
    return _result(_kabsch(X, Y, w), X, Y, weights=None if weights is None else w)


def tukey_weights(r: np.ndarray, scale: float, c: float = TUKEY_C) -> np.ndarray:
    u = r / (c * scale)
    return np.where(u < 1.0, (1.0 - u * u) ** 2, 0.0)


def _kabsch_batch(Xs: np.ndarray, Ys: np.ndarray):
    """Unweighted Kabsch for a stack ``(S, k, 3)``; returns ``R, t, ok``."""
    xc, yc = Xs.mean(axis=1), Ys.mean(axis=1)
    H = np.einsum("ski,skj->sij", Xs - xc[:, None], Ys - yc[:, None])
    U, S, Vt = np.linalg.svd(H)
    ok = (S[:, 0] > 0) & (S[:, 1] >= DEGENERACY_RATIO * S[:, 0])
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    d[d == 0] = 1.0
    D = np.zeros((len(Xs), 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = yc - np.einsum("sij,sj->si", R, xc)
    return R, t, ok


def lmeds_pose(X, Y, max_subsets: int = MAX_LMEDS_SUBSETS, seed: int = 0) -> Pose:
    """Least-median-of-squares pose over minimal 3-point subsets.

    All triples are tried when there are at most ``max_subsets`` of them,
    otherwise a seeded random selection.  Ties go to the first triple.
    """
    X, Y = _check_pairs(X, Y)
    n = len(X)
    triples = np.array(list(combinations(range(n), 3)), dtype=np.int64) if comb(n, 3) <= max_subsets else \
        np.sort(np.stack([np.random.default_rng([seed, k]).choice(n, 3, replace=False)
                          for k in range(max_subsets)]), axis=1)
    R, t, ok = _kabsch_batch(X[triples], Y[triples])
    if not ok.any():
        raise DegenerateGeometryError("every 3-point subset is collinear", stage="registration")
    res = np.linalg.norm(np.einsum("sij,nj->sni", R, X) + t[:, None] - Y[None], axis=2)
    med = np.where(ok, np.median(res, axis=1), np.inf)
    best = int(np.argmin(med))
    return Pose(R[best], t[best])


def procrustes_irls(X, Y, max_iter: int = 30, tol: float = 1e-10, c: float = TUKEY_C) -> RegistrationResult:
    """Procrustes with Tukey-biweight iterative reweighting.

    Starts from the least-median-of-squares pose, since a least-squares
    start lets a few gross outliers inflate the scale until nothing gets
    rejected.  The residual scale is ``1.4826 * median(|r|)`` of the current
    residual norms.  Iteration stops once the pose moves less than ``tol``
    (Frobenius norm of the rotation change plus translation change, meters).
    """
    X, Y = _check_pairs(X, Y)
    if len(X) < 4:
        raise ValueError("IRLS needs at least 4 correspondences")
    fit = _result(lmeds_pose(X, Y), X, Y)
    pose, r = fit.pose, fit.residuals
    w = np.ones(len(X))
    history = [fit.rms]
    it = 1
    converged = False
    while it < max_iter:
        if r.max() <= SCALE_FLOOR:
            converged = True  # exact fit up to rounding
            break
        mad = float(np.median(r))
        if mad == 0.0:
            svd = procrustes_svd(X, Y)
            return RegistrationResult(svd.pose, svd.rms, svd.residuals, it, np.ones(len(X)),
                                      history, converged=False, fallback=True)
        w_new = tukey_weights(r, max(MAD_TO_SIGMA * mad, SCALE_FLOOR), c)
        try:
            new_pose = _kabsch(X, Y, w_new)
        except DegenerateGeometryError:
            break  # too few points kept; stay at the last valid estimate
        it += 1
        change = np.linalg.norm(new_pose.R - pose.R) + np.linalg.norm(new_pose.t - pose.t)
        pose, w = new_pose, w_new
        r = _residuals(pose, X, Y)
        history.append(float(np.sqrt(np.mean(r * r))))
        if change < tol:
            converged = True
            break
    return _result(pose, X, Y, iterations=it, weights=w, history=history, converged=converged)


def icp_refine(model: PointCloud, scene: PointCloud, T_init: Pose, max_iter: int = 50,
               tol: float = 1e-9, gate: float | None = 3.0,
               max_distance: float | None = None) -> RegistrationResult:
    """Point-to-point ICP of ``model`` (object frame) onto ``scene`` (camera frame).

    Each step matches every transformed model point to its nearest scene
    point and re-solves Procrustes.  From the second step on, pairs farther
    than ``gate`` times the previous RMS are dropped.  A step that would raise
    the RMS is rejected, so ``history`` never increases.  Stops when the RMS
    improves by less than ``tol`` (meters).
    """
    src = model.points
    tree = cKDTree(scene.points)

    def match(T: Pose, radius: float | None):
        d, nn = tree.query(T.apply(src))
        keep = np.ones(len(d), dtype=bool)
        if max_distance is not None:
            keep &= d <= max_distance
        if radius is not None:
            keep &= d <= max(radius, SCALE_FLOOR)
        if keep.sum() < 3:
            raise DegenerateGeometryError("scene cloud is empty after distance gating",
                                          stage="icp", hint="check the initial pose or loosen the gate")
        return d, nn, keep

    T = T_init
    d, nn, keep = match(T, None)
    rms = float(np.sqrt(np.mean(d[keep] ** 2)))
    history = [rms]
    it = 0
    converged = False
    while it < max_iter:
        T_new = _kabsch(src[keep], scene.points[nn[keep]], np.ones(int(keep.sum())))
        it += 1
        d_new, nn_new, keep_new = match(T_new, None if gate is None else gate * rms)
        rms_new = float(np.sqrt(np.mean(d_new[keep_new] ** 2)))
        if rms_new > rms:
            converged = True
            break
        improvement = rms - rms_new
        T, d, nn, keep, rms = T_new, d_new, nn_new, keep_new, rms_new
        history.append(rms)
        if improvement < tol:
            converged = True
            break
    res = d[keep]
    return RegistrationResult(T, float(np.sqrt(np.mean(res * res))), res, it,
                              keep.astype(float), history, converged)
