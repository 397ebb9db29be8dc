"""Object models, farthest point sampling and object diameter."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist

from .errors import ConfigError, ParseError

UNIT_SCALE = {"m": 1.0, "mm": 1e-3}
FPS_MAX_POINTS = 50_000
EXACT_DIAMETER_MAX = 10_000
DEFAULT_M = 9


def unit_scale(unit: str) -> float:
    try:
        return UNIT_SCALE[unit]
    except KeyError:
        raise ConfigError(f"unknown unit {unit!r}; expected 'm' or 'mm'") from None


@dataclass(frozen=True, eq=False)
class PointCloud:
    """``(N, 3)`` points in meters with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise ValueError(f"point cloud must be a non-empty (N, 3) array, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=float)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in shape")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        n = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], n)


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Reference keypoints in the object frame.

    ``min_distances[k]`` is the greedy max-min distance at which keypoint ``k``
    was selected (``inf`` for the seed); the last entry is the covering radius.
    """

    points: np.ndarray
    seed_index: int = 0
    indices: np.ndarray | None = None
    min_distances: np.ndarray | None = None
    subsample_stride: int = 1

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise ValueError("keypoints must be a non-empty (M, 3) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("keypoints must be finite")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("keypoints must be pairwise distinct")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return len(self.points)

    @property
    def covering_radius(self) -> float:
        if self.min_distances is None or len(self.min_distances) < 2:
            return float("nan")
        return float(self.min_distances[-1])


def farthest_point_sample(cloud: PointCloud, M: int = DEFAULT_M, seed_index: int = 0,
                          max_points: int = FPS_MAX_POINTS) -> KeypointSet:
    """Greedy max-min selection of ``M`` keypoints starting at ``seed_index``.

    Ties go to the lowest point index.  Clouds larger than ``max_points`` are
    first subsampled with a uniform stride; ``seed_index`` then refers to the
    subsampled cloud.
    """
    pts = cloud.points
    stride = 1
    if len(pts) > max_points:
        stride = -(-len(pts) // max_points)
        pts = pts[::stride]
    n = len(pts)
    if M < 1:
        raise ValueError("M must be at least 1")
    if M > n:
        raise ValueError(f"cannot select M={M} keypoints from a cloud of {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} outside [0, {n})")

    chosen = np.empty(M, dtype=np.int64)
    gaps = np.empty(M)
    chosen[0] = seed_index
    gaps[0] = np.inf
    dist = np.linalg.norm(pts - pts[seed_index], axis=1)
    for k in range(1, M):
        i = int(np.argmax(dist))  # first maximum -> lowest index
        chosen[k] = i
        gaps[k] = dist[i]
        np.minimum(dist, np.linalg.norm(pts - pts[i], axis=1), out=dist)
    return KeypointSet(pts[chosen], seed_index=seed_index, indices=chosen * stride,
                       min_distances=gaps, subsample_stride=stride)


def _max_pairwise(pts: np.ndarray, block: int = 1024) -> float:
    best = 0.0
    for s in range(0, len(pts), block):
        best = max(best, float(cdist(pts[s:s + block], pts).max()))
    return best


def diameter(cloud: PointCloud) -> float:
    """Largest pairwise distance (meters).

    Brute force up to ``EXACT_DIAMETER_MAX`` points; larger clouds are reduced
    to their convex hull vertices first, which preserves the maximum.
    """
    pts = cloud.points
    if len(pts) < 2:
        raise ValueError("diameter needs at least two points")
    if len(pts) > EXACT_DIAMETER_MAX:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat or degenerate cloud: fall back to brute force
    return _max_pairwise(pts)


# --------------------------------------------------------------------------- I/O


def read_ply(path, unit: str | None = None) -> PointCloud:
    """Read vertices (and normals when present) from an ASCII PLY file.

    ``unit`` overrides a ``comment unit mm|m`` header line; without either the
    coordinates are taken as meters.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read PLY: {exc}", path=path) from exc
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", path=path, line=1)

    elements: list[tuple[str, int, list[str]]] = []
    header_unit = "m"
    fmt = None
    body_start = None
    for ln, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] == "obj_info":
            continue
        if tok[0] == "comment":
            if len(tok) >= 3 and tok[1] == "unit" and unit is None:
                header_unit = tok[2]
            continue
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element line", path=path, line=ln)
            try:
                elements.append((tok[1], int(tok[2]), []))
            except ValueError:
                raise ParseError("element count is not an integer", path=path, line=ln) from None
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", path=path, line=ln)
            elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            body_start = ln  # 1-based line of end_header; body begins after it
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", path=path, line=ln)
    if fmt != "ascii":
        raise ParseError(f"only ASCII PLY is supported (format {fmt!r})", path=path)
    if body_start is None:
        raise ParseError("missing end_header", path=path)

    scale = unit_scale(unit if unit is not None else header_unit)
    cursor = body_start  # index into lines of the first body line
    verts = None
    props: list[str] = []
    for name, count, eprops in elements:
        if name == "vertex":
            props = eprops
            for req in ("x", "y", "z"):
                if req not in props:
                    raise ParseError(f"vertex element lacks property {req!r}", path=path)
            rows = []
            for k in range(count):
                ln = cursor + k + 1
                if cursor + k >= len(lines):
                    raise ParseError(f"expected {count} vertices, file ended", path=path, line=ln)
                parts = lines[cursor + k].split()
                if len(parts) < len(props):
                    raise ParseError(f"vertex row has {len(parts)} values, expected {len(props)}",
                                     path=path, line=ln)
                try:
                    rows.append([float(p) for p in parts[:len(props)]])
                except ValueError:
                    raise ParseError("non-numeric vertex value", path=path, line=ln) from None
            verts = np.array(rows, dtype=float).reshape(count, len(props))
        cursor += count
    if verts is None or len(verts) == 0:
        raise ParseError("no vertices found", path=path)
    xyz = verts[:, [props.index(c) for c in "xyz"]] * scale
    normals = None
    if all(c in props for c in ("nx", "ny", "nz")):
        normals = verts[:, [props.index(c) for c in ("nx", "ny", "nz")]]
        n = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, n, out=np.zeros_like(normals), where=n > 0)
    try:
        return PointCloud(xyz, normals)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from exc


def write_ply(cloud: PointCloud, path, unit: str = "m") -> None:
    scale = unit_scale(unit)
    has_n = cloud.normals is not None
    header = ["ply", "format ascii 1.0", f"comment unit {unit}", f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    if has_n:
        header += ["property float nx", "property float ny", "property float nz"]
    header.append("end_header")
    data = cloud.points / scale
    if has_n:
        data = np.hstack([data, cloud.normals])
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.9g")


def save_keypoints(kps: KeypointSet, path, model_path=None) -> None:
    doc = {
        "M": kps.M,
        "unit": "m",
        "points": [[float(f"{c:.12g}") for c in p] for p in kps.points],
        "seed_index": int(kps.seed_index),
        "subsample_stride": int(kps.subsample_stride),
        "covering_radius": None if np.isnan(kps.covering_radius) else float(f"{kps.covering_radius:.12g}"),
    }
    if kps.indices is not None:
        doc["indices"] = [int(i) for i in kps.indices]
    if model_path is not None:
        doc["model"] = str(model_path)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_keypoints(path) -> KeypointSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read keypoints: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    try:
        pts = np.asarray(doc["points"], dtype=float) * unit_scale(doc.get("unit", "m"))
        if "M" in doc and int(doc["M"]) != len(pts):
            raise ParseError(f"M={doc['M']} but {len(pts)} points listed", path=path)
        return KeypointSet(pts, seed_index=int(doc.get("seed_index", 0)),
                           indices=np.asarray(doc["indices"]) if "indices" in doc else None,
                           subsample_stride=int(doc.get("subsample_stride", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid keypoint file: {exc}", path=path) from exc
