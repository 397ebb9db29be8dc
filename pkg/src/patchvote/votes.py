"""Patch grid, offsets, vote reconstruction and the synthetic vote predictor.

The synthetic predictor stands in for the classification and regression
networks: it decides which sliding-window patches cover the object by
projecting the model under the ground-truth pose, simulates the classifier
with fixed true positive / true negative rates, and emits ground-truth offsets
corrupted by isotropic Gaussian noise and uniform outliers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySceneError, ParseError
from .geometry import CameraIntrinsics, Pose, backproject
from .keypoints import KeypointSet, PointCloud

# classifier rates are the per-object means of the patch classifier
DEFAULT_TPR = 0.931
DEFAULT_TNR = 0.997
# mean keypoint regression error, meters
DEFAULT_SIGMA_V = 0.0118
# inference settings: patch size, stride, classifier threshold
DEFAULT_PATCH = 64
DEFAULT_STRIDE = 4
CLASSIFIER_THRESHOLD = 0.98
DEFAULT_OUTLIER_RADIUS = 0.5

VOTE_CSV_HEADER = ["patch_index", "keypoint_index", "x", "y", "z"]


@dataclass(frozen=True, eq=False)
class PatchGrid:
    """Row-major sliding-window patch centers ``(K, 2)`` as ``(u, v)`` pixels."""

    width: int
    height: int
    h: int
    w: int
    stride: int
    centers: np.ndarray

    @property
    def K(self) -> int:
        return len(self.centers)


def make_patch_grid(width: int, height: int, h: int = DEFAULT_PATCH, w: int = DEFAULT_PATCH,
                    d: int = DEFAULT_STRIDE) -> PatchGrid:
    if d < 1:
        raise ValueError("stride must be at least 1")
    if h < 1 or w < 1:
        raise ValueError("patch size must be positive")
    if w > width or h > height:
        raise ValueError(f"patch {h}x{w} larger than image {height}x{width}")
    us = w / 2.0 + d * np.arange((width - w) // d + 1)
    vs = h / 2.0 + d * np.arange((height - h) // d + 1)
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    centers = np.column_stack([uu.ravel(), vv.ravel()])
    centers.flags.writeable = False
    return PatchGrid(width, height, h, w, d, centers)


def compute_offsets(T: Pose, C, keypoints: KeypointSet) -> np.ndarray:
    """Offsets ``T X_j - C_i``; ``(M, 3)`` for one center, ``(N, M, 3)`` for many."""
    C = np.asarray(C, dtype=float)
    Y = T.apply(keypoints.points)
    if C.ndim == 1:
        return Y - C
    return Y[None, :, :] - C[:, None, :]


@dataclass(frozen=True, eq=False)
class VoteSet:
    """``positions[i, j]`` is patch ``i``'s vote for keypoint ``j`` (camera frame, m)."""

    positions: np.ndarray
    patch_indices: np.ndarray | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 3 or pos.shape[0] < 1 or pos.shape[1] < 1:
            raise ValueError(f"votes must have shape (N>=1, M>=1, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("votes must be finite")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        idx = self.patch_indices
        idx = np.arange(len(pos)) if idx is None else np.array(idx, dtype=np.int64)
        if idx.shape != (len(pos),):
            raise ValueError("patch_indices must have one entry per patch")
        idx.flags.writeable = False
        object.__setattr__(self, "patch_indices", idx)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def M(self) -> int:
        return self.positions.shape[1]

    def cluster(self, j: int) -> np.ndarray:
        return self.positions[:, j, :]

    def subset(self, rows) -> "VoteSet":
        return VoteSet(self.positions[rows], self.patch_indices[rows])


def reconstruct_votes(centers, offsets, patch_indices=None) -> VoteSet:
    """Votes ``C_i + delta_ij`` from patch centers ``(N, 3)`` and offsets ``(N, M, 3)``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 2:
        offsets = offsets[None]
    if len(centers) != len(offsets):
        raise ValueError(f"{len(centers)} patch centers but {len(offsets)} offset sets")
    return VoteSet(centers[:, None, :] + offsets, patch_indices)


# ------------------------------------------------------------------ synthesis


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Everything needed to fake one RGB-D frame's worth of votes.

    Lengths in meters.  ``max_patches`` caps the number of kept patches by
    uniform subsampling (``None``: no cap).  ``clutter`` is the number of
    clutter points added to the simulated depth cloud, as a fraction of the
    visible object points.
    """

    pose: Pose
    model: PointCloud
    keypoints: KeypointSet
    intrinsics: CameraIntrinsics
    width: int = 640
    height: int = 480
    patch_h: int = DEFAULT_PATCH
    patch_w: int = DEFAULT_PATCH
    stride: int = DEFAULT_STRIDE
    sigma_v: float = DEFAULT_SIGMA_V
    p_out: float = 0.1
    outlier_radius: float = DEFAULT_OUTLIER_RADIUS
    tpr: float = DEFAULT_TPR
    tnr: float = DEFAULT_TNR
    sigma_z: float = 0.002
    background_depth: float = 1.5
    max_patches: int | None = None
    clutter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_out < 1.0:
            raise ValueError("p_out must lie in [0, 1)")
        for name in ("sigma_v", "sigma_z", "outlier_radius", "clutter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("tpr", "tnr"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.background_depth <= 0:
            raise ValueError("background_depth must be positive")
        if self.max_patches is not None and self.max_patches < 1:
            raise ValueError("max_patches must be at least 1")
        make_patch_grid(self.width, self.height, self.patch_h, self.patch_w, self.stride)

    def with_(self, **changes) -> "SyntheticScene":
        return replace(self, **changes)


@dataclass(eq=False)
class SynthesisResult:
    votes: VoteSet
    centers: np.ndarray          # (N, 3) back-projected patch centers
    is_object: np.ndarray        # (N,) ground-truth membership of kept patches
    n_object: int                # object patches in the whole grid
    n_background: int
    true_positives: int
    false_positives: int
    grid_size: int
    stats: dict = field(default_factory=dict)

    @property
    def realized_tpr(self) -> float:
        return self.true_positives / self.n_object if self.n_object else float("nan")

    @property
    def realized_tnr(self) -> float:
        if not self.n_background:
            return float("nan")
        return 1.0 - self.false_positives / self.n_background


def visible_points(model: PointCloud, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Camera-frame points (and their model indices) facing the camera.

    Without normals every point in front of the camera counts as visible.
    """
    P = pose.apply(model.points)
    keep = P[:, 2] > 0
    if model.normals is not None:
        n_cam = model.normals @ pose.R.T
        keep &= np.einsum("ij,ij->i", n_cam, P) < 0
    idx = np.flatnonzero(keep)
    return P[idx], idx


def _uniform_ball(direction: np.ndarray, u: np.ndarray, radius: float) -> np.ndarray:
    norm = np.linalg.norm(direction, axis=-1, keepdims=True)
    norm[norm == 0] = 1.0
    return direction / norm * (radius * np.cbrt(u))[..., None]


def synthesize(scene: SyntheticScene) -> SynthesisResult:
    """Simulate classification and regression for every grid patch.

    Per-patch random draws occupy fixed rows of arrays sized by the whole
    grid, so a patch's noise depends only on the seed and its grid index.
    """
    K_int = scene.intrinsics
    grid = make_patch_grid(scene.width, scene.height, scene.patch_h, scene.patch_w, scene.stride)
    Kp = grid.K
    M = scene.keypoints.M
    rng = np.random.default_rng([scene.seed, 0])
    u_cls = rng.random(Kp)
    z_noise = rng.standard_normal(Kp)
    vote_noise = rng.standard_normal((Kp, M, 3))
    out_flag = rng.random((Kp, M))
    out_dir = rng.standard_normal((Kp, M, 3))
    out_rad = rng.random((Kp, M))

    P_vis, _ = visible_points(scene.model, scene.pose)
    is_obj = np.zeros(Kp, dtype=bool)
    depth = np.full(Kp, scene.background_depth)
    if len(P_vis):
        uv = K_int.project(P_vis)
        half = np.array([scene.patch_w / 2.0, scene.patch_h / 2.0])
        # footprint test: Chebyshev distance in half-size units <= 1
        d_cheb, _ = cKDTree(uv / half).query(grid.centers / half, p=np.inf)
        is_obj = d_cheb <= 1.0
        if is_obj.any():
            tree = cKDTree(uv)
            k = min(8, len(uv))
            dist, nn = tree.query(grid.centers[is_obj], k=k)
            dist, nn = dist.reshape(-1, k), nn.reshape(-1, k)
            # among near-equidistant projections, the front-most surface wins
            close = dist <= dist[:, :1] + 3.0
            zs = np.where(close, P_vis[nn, 2], np.inf)
            depth[is_obj] = zs.min(axis=1)

    kept_obj = is_obj & (u_cls < scene.tpr)
    kept_bg = ~is_obj & (u_cls < 1.0 - scene.tnr)
    kept = np.flatnonzero(kept_obj | kept_bg)
    if not kept_obj.any():
        raise EmptySceneError(
            "no object patch survived classification",
            stage="synth", hint="object may be out of frame or TPR too low")
    if scene.max_patches is not None and len(kept) > scene.max_patches:
        sub = np.random.default_rng([scene.seed, 2]).choice(len(kept), scene.max_patches, replace=False)
        kept = kept[np.sort(sub)]
        if not is_obj[kept].any():
            raise EmptySceneError("patch cap removed every object patch", stage="synth",
                                  hint="raise max_patches")

    uv_k = grid.centers[kept]
    z_true = depth[kept]
    z_meas = np.maximum(z_true + scene.sigma_z * z_noise[kept], 1e-3)
    C_true = backproject(uv_k[:, 0], uv_k[:, 1], z_true, K_int)
    C = backproject(uv_k[:, 0], uv_k[:, 1], z_meas, K_int)

    Y = scene.pose.apply(scene.keypoints.points)
    obj_k = is_obj[kept]
    offsets = Y[None] - C_true[:, None, :] + scene.sigma_v * vote_noise[kept]
    votes = C[:, None, :] + offsets
    outlier = (out_flag[kept] < scene.p_out) | ~obj_k[:, None]
    junk = C[:, None, :] + _uniform_ball(out_dir[kept], out_rad[kept], scene.outlier_radius)
    votes = np.where(outlier[..., None], junk, votes)

    n_obj = int(is_obj.sum())
    return SynthesisResult(
        votes=VoteSet(votes, kept),
        centers=C,
        is_object=obj_k,
        n_object=n_obj,
        n_background=Kp - n_obj,
        true_positives=int(kept_obj.sum()),
        false_positives=int(kept_bg.sum()),
        grid_size=Kp,
        stats={"outlier_votes": int(outlier.sum())},
    )


def synth_votes(scene: SyntheticScene) -> VoteSet:
    return synthesize(scene).votes


def scene_cloud(scene: SyntheticScene) -> PointCloud:
    """Simulated depth-sensor cloud: visible surface with depth noise plus clutter."""
    rng = np.random.default_rng([scene.seed, 1])
    P, _ = visible_points(scene.model, scene.pose)
    if len(P) == 0:
        raise EmptySceneError("object not visible", stage="synth")
    P = P * (1.0 + scene.sigma_z * rng.standard_normal(len(P)) / P[:, 2])[:, None]
    n_clutter = int(round(scene.clutter * len(P)))
    if n_clutter:
        lo, hi = P.min(axis=0) - 0.05, P.max(axis=0) + 0.05
        P = np.concatenate([P, lo + rng.random((n_clutter, 3)) * (hi - lo)])
    return PointCloud(P)


# ------------------------------------------------------------------ file I/O


def format_votes(votes: VoteSet) -> str:
    buf = io.StringIO()
    buf.write(",".join(VOTE_CSV_HEADER) + "\n")
    for i, pidx in enumerate(votes.patch_indices):
        for j in range(votes.M):
            x, y, z = votes.positions[i, j]
            buf.write(f"{pidx},{j},{x:.9g},{y:.9g},{z:.9g}\n")
    return buf.getvalue()


def save_votes(votes: VoteSet, path) -> None:
    """Write votes as CSV (meters, 9 significant digits, 0-based indices)."""
    with open(path, "w", newline="") as fh:
        fh.write(format_votes(votes))


def load_votes(path) -> VoteSet:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read votes: {exc}", path=path) from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty vote file", path=path, line=1)
    if [c.strip() for c in rows[0]] != VOTE_CSV_HEADER:
        raise ParseError(f"expected header {','.join(VOTE_CSV_HEADER)}", path=path, line=1)

    patches: dict[int, dict[int, tuple[float, float, float]]] = {}
    first_line: dict[int, int] = {}
    for ln, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", path=path, line=ln)
        try:
            p, j = int(row[0]), int(row[1])
            xyz = tuple(float(c) for c in row[2:])
        except ValueError:
            raise ParseError("non-numeric field", path=path, line=ln) from None
        if p < 0 or j < 0:
            raise ParseError("indices must be non-negative", path=path, line=ln)
        if not all(math.isfinite(c) for c in xyz):
            raise ParseError("non-finite coordinate", path=path, line=ln)
        block = patches.setdefault(p, {})
        first_line.setdefault(p, ln)
        if j in block:
            raise ParseError(f"duplicate vote for patch {p}, keypoint {j}", path=path, line=ln)
        block[j] = xyz
    if not patches:
        raise ParseError("vote file contains no votes", path=path, line=len(rows))

    order = sorted(patches)
    M = len(patches[order[0]])
    expected = set(range(M))
    for p in order:
        if set(patches[p]) != expected:
            raise ParseError(
                f"patch {p} has keypoints {sorted(patches[p])}, expected 0..{M - 1}",
                path=path, line=first_line[p])
    pos = np.array([[patches[p][j] for j in range(M)] for p in order])
    return VoteSet(pos, np.array(order, dtype=np.int64))
