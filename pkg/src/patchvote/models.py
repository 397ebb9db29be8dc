"""Procedural object models with outward normals.

Each model is a union of boxes and spheres.  Surfaces are sampled with area
weighting from a fixed seed; a sample survives if stepping a hair along its
normal does not land inside another primitive, which removes buried faces.
The result is centred on its bounding box and scaled to a target diameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keypoints import PointCloud, diameter

_EPS = 1e-7


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def area(self) -> float:
        dx, dy, dz = np.subtract(self.hi, self.lo)
        return 2.0 * (dx * dy + dy * dz + dx * dz)

    def inside(self, p: np.ndarray) -> np.ndarray:
        return np.all((p > self.lo) & (p < self.hi), axis=1)

    def sample(self, n: int, rng: np.random.Generator):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        ext = hi - lo
        face_areas = []
        for axis in range(3):
            a, b = [k for k in range(3) if k != axis]
            face_areas += [ext[a] * ext[b]] * 2
        face_areas = np.asarray(face_areas)
        face = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        pts = lo + rng.random((n, 3)) * ext
        nrm = np.zeros((n, 3))
        axis = face // 2
        side = face % 2
        rows = np.arange(n)
        pts[rows, axis] = np.where(side == 1, hi[axis], lo[axis])
        nrm[rows, axis] = np.where(side == 1, 1.0, -1.0)
        return pts, nrm


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    def inside(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(p - np.asarray(self.center), axis=1) < self.radius

    def sample(self, n: int, rng: np.random.Generator):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * d, d


def sample_union(prims, n_points: int, seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    areas = np.array([p.area() for p in prims])
    pts_all, nrm_all = [], []
    # oversample, then thin to exactly n_points
    counts = rng.multinomial(4 * n_points, areas / areas.sum())
    for k, (prim, cnt) in enumerate(zip(prims, counts)):
        pts, nrm = prim.sample(int(cnt), rng)
        probe = pts + _EPS * nrm
        buried = np.zeros(len(pts), dtype=bool)
        for j, other in enumerate(prims):
            if j != k:
                buried |= other.inside(probe)
        pts_all.append(pts[~buried])
        nrm_all.append(nrm[~buried])
    pts = np.concatenate(pts_all)
    nrm = np.concatenate(nrm_all)
    if len(pts) < n_points:
        raise RuntimeError("not enough surface samples survived; increase oversampling")
    keep = np.sort(rng.choice(len(pts), size=n_points, replace=False))
    return PointCloud(pts[keep], nrm[keep])


def _normalise(cloud: PointCloud, target_diameter: float) -> PointCloud:
    pts = cloud.points
    pts = pts - (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    pts = pts * (target_diameter / diameter(PointCloud(pts)))
    return PointCloud(pts, cloud.normals)


def cube_with_bumps(n_points: int = 2000, target_diameter: float = 0.25, seed: int = 0) -> PointCloud:
    """Cube with four hemispherical bumps placed without any rotational symmetry."""
    prims = [
        Box((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)),
        Sphere((1.0, 0.2, -0.1), 0.5),
        Sphere((0.3, 1.0, 0.4), 0.45),
        Sphere((0.5, 0.45, 1.0), 0.35),
        Sphere((-0.4, -0.3, 1.0), 0.28),
    ]
    return _normalise(sample_union(prims, n_points, seed), target_diameter)


def l_shape(n_points: int = 2000, target_diameter: float = 0.25, seed: int = 0) -> PointCloud:
    """L-shaped bracket with unequal arms and heights (no symmetry)."""
    prims = [
        Box((0.0, 0.0, 0.0), (3.0, 1.0, 1.0)),
        Box((0.0, 1.0, 0.0), (1.0, 2.2, 0.6)),
    ]
    return _normalise(sample_union(prims, n_points, seed), target_diameter)


def symmetric_plate(n_points: int = 2000, target_diameter: float = 0.25, seed: int = 0) -> PointCloud:
    """Thin plate with two top bumps, invariant under a 180 degree turn about z."""
    prims = [
        Box((-2.0, -1.0, -0.15), (2.0, 1.0, 0.15)),
        Sphere((1.2, 0.0, 0.15), 0.3),
        Sphere((-1.2, 0.0, 0.15), 0.3),
    ]
    cloud = sample_union(prims, n_points, seed)
    # symmetrize the sample itself so the 180 degree turn maps the cloud onto itself
    half = cloud.points[: n_points // 2]
    hn = cloud.normals[: n_points // 2]
    flip = np.array([-1.0, -1.0, 1.0])
    pts = np.concatenate([half, half * flip])
    nrm = np.concatenate([hn, hn * flip])
    return _normalise(PointCloud(pts, nrm), target_diameter)


BUILTIN_MODELS = {
    "cube_bumps": cube_with_bumps,
    "l_shape": l_shape,
    "plate": symmetric_plate,
}


def builtin_model(name: str, n_points: int = 2000, target_diameter: float = 0.25) -> PointCloud:
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ValueError(f"unknown builtin model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    return factory(n_points=n_points, target_diameter=target_diameter)
