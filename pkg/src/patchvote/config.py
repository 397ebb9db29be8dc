"""JSON configuration files: synthetic scenes, pipeline settings and servo scenarios.

Lengths in these files use the file's ``"unit"`` (``"mm"`` by default) and
angles are degrees; everything is converted to meters and radians on load.
Unknown keys are rejected so typos fail loudly.  Relative paths resolve
against the directory of the JSON file.  The schemas are documented in
``docs/formats.md``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregation import MeanShiftConfig
from .errors import ConfigError, ParseError
from .geometry import CameraIntrinsics, Pose
from .keypoints import PointCloud, farthest_point_sample, load_keypoints, read_ply, unit_scale
from .models import BUILTIN_MODELS, builtin_model
from .pipeline import PipelineConfig
from .servoing import ServoConfig
from .votes import SyntheticScene

# Kinect-style intrinsics used by the common household-object benchmarks
DEFAULT_INTRINSICS = CameraIntrinsics(572.4114, 573.57043, 325.2611, 242.04899)
DEFAULT_OBJECT_DISTANCE = 0.7


def read_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


class _Section:
    """Typed, strict accessor over one JSON object."""

    def __init__(self, doc, where: str, scale: float = 1.0):
        if not isinstance(doc, dict):
            raise ConfigError(f"{where}: expected a JSON object")
        self.doc = doc
        self.where = where
        self.scale = scale
        self.used = set()

    def has(self, key) -> bool:
        return key in self.doc and self.doc[key] is not None

    def raw(self, key, default=None):
        self.used.add(key)
        v = self.doc.get(key)
        return default if v is None else v

    def number(self, key, default=None, length=False, integer=False):
        v = self.raw(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{self.where}.{key}: expected a finite number, got {v!r}")
        if integer:
            if int(v) != v:
                raise ConfigError(f"{self.where}.{key}: expected an integer, got {v!r}")
            return int(v)
        return float(v) * (self.scale if length and key in self.doc else 1.0)

    def vector(self, key, n=3, default=None, factor=1.0):
        v = self.raw(key, default)
        if v is None:
            return None
        try:
            a = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.where}.{key}: expected {n} numbers") from None
        if a.shape != (n,) or not np.all(np.isfinite(a)):
            raise ConfigError(f"{self.where}.{key}: expected {n} finite numbers, got {v!r}")
        return a * factor

    def text(self, key, default=None, choices=None):
        v = self.raw(key, default)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"{self.where}.{key}: expected a string")
        if choices is not None and v not in choices:
            raise ConfigError(f"{self.where}.{key}: expected one of {sorted(choices)}, got {v!r}")
        return v

    def flag(self, key, default=False):
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise ConfigError(f"{self.where}.{key}: expected true or false")
        return v

    def done(self):
        extra = sorted(set(self.doc) - self.used)
        if extra:
            raise ConfigError(f"{self.where}: unknown key(s) {', '.join(extra)}")


def _file_unit(doc: dict, where: str, override: str | None = None) -> tuple[str, float]:
    unit = override or doc.get("unit", "mm")
    try:
        return unit, unit_scale(unit)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def parse_pose(doc, where: str, scale: float) -> Pose:
    s = _Section(doc, where, scale)
    t = s.vector("translation", factor=scale)
    if t is None:
        raise ConfigError(f"{where}.translation is required")
    rv = s.vector("axis_angle_deg", default=[0.0, 0.0, 0.0], factor=math.pi / 180.0)
    s.done()
    try:
        return Pose.from_rotvec(rv, t)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_model(entry, base: Path, where: str = "model") -> tuple[PointCloud, str]:
    """Model from ``{"builtin": name, ...}`` or ``{"ply": path}``.  Returns ``(cloud, label)``."""
    if isinstance(entry, str):
        entry = {"builtin": entry} if entry in BUILTIN_MODELS else {"ply": entry}
    s = _Section(entry, where, 1e-3)
    if s.has("builtin"):
        name = s.text("builtin", choices=set(BUILTIN_MODELS))
        n = s.number("points", 2000, integer=True)
        D = s.number("diameter_mm", 250.0) * 1e-3
        s.done()
        if n < 10 or D <= 0:
            raise ConfigError(f"{where}: need points >= 10 and a positive diameter")
        return builtin_model(name, n_points=n, target_diameter=D), name
    if s.has("ply"):
        path = _resolve(base, s.text("ply"))
        unit = s.text("unit", None, choices={None, *("m", "mm")})
        s.done()
        return read_ply(path, unit=unit), str(path)
    raise ConfigError(f"{where}: expected a 'builtin' or 'ply' entry")


def parse_scene(doc: dict, base: Path = Path("."), unit: str | None = None, seed: int = 0) -> SyntheticScene:
    """SyntheticScene from a scene JSON object."""
    _, scale = _file_unit(doc, "scene", unit)
    s = _Section(doc, "scene", scale)
    s.raw("unit")
    model, _ = load_model(s.raw("model", "cube_bumps"), base)
    if s.has("keypoints"):
        kps = load_keypoints(_resolve(base, s.text("keypoints")))
        s.number("M", integer=True)
    else:
        M = s.number("M", 9, integer=True)
        if M < 3:
            raise ConfigError("scene.M must be at least 3")
        kps = farthest_point_sample(model, M)
    pose = (parse_pose(s.raw("pose"), "scene.pose", scale) if s.has("pose")
            else Pose(np.eye(3), [0.0, 0.0, DEFAULT_OBJECT_DISTANCE]))
    K = DEFAULT_INTRINSICS
    if s.has("intrinsics"):
        k = _Section(s.raw("intrinsics"), "scene.intrinsics")
        vals = [k.number(n) for n in ("fx", "fy", "cx", "cy")]
        k.done()
        if None in vals:
            raise ConfigError("scene.intrinsics needs fx, fy, cx and cy")
        try:
            K = CameraIntrinsics(*vals)
        except ValueError as exc:
            raise ConfigError(f"scene.intrinsics: {exc}") from None
    patch = s.number("patch", 64, integer=True)
    max_patches = s.number("max_patches", None, integer=True)
    try:
        scene = SyntheticScene(
            pose=pose, model=model, keypoints=kps, intrinsics=K,
            width=s.number("width", 640, integer=True),
            height=s.number("height", 480, integer=True),
            patch_h=patch, patch_w=patch,
            stride=s.number("stride", 4, integer=True),
            sigma_v=s.number("sigma_v", 0.0118, length=True),
            p_out=s.number("p_out", 0.1),
            outlier_radius=s.number("outlier_radius", 0.5, length=True),
            tpr=s.number("tpr", 0.931),
            tnr=s.number("tnr", 0.997),
            sigma_z=s.number("sigma_z", 0.002, length=True),
            background_depth=s.number("background_depth", 1.5, length=True),
            max_patches=max_patches,
            clutter=s.number("clutter", 0.0),
            seed=s.number("seed", seed, integer=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"scene: {exc}") from None
    s.done()
    return scene


def _pipeline_section(doc: dict, unit: str | None):
    """PipelineConfig plus the section accessor, so callers can read more keys."""
    _, scale = _file_unit(doc, "pipeline", unit)
    s = _Section(doc, "pipeline", scale)
    s.raw("unit")
    ms = _Section(s.raw("mean_shift", {}), "pipeline.mean_shift", scale)
    icp = _Section(s.raw("icp", {}), "pipeline.icp", scale)
    try:
        mean_shift = MeanShiftConfig(
            bandwidth=ms.number("bandwidth", 0.040, length=True),
            tol=ms.number("tol", 1e-4, length=True),
            max_iter=ms.number("max_iter", 100, integer=True),
            multi_start=ms.flag("multi_start"),
            n_starts=ms.number("n_starts", 5, integer=True),
            seed=ms.number("seed", 0, integer=True),
        )
        cfg = PipelineConfig(
            mean_shift=mean_shift,
            registration=s.text("registration", "irls"),
            cluster_k=s.number("cluster_k", None, integer=True),
            metric=s.text("metric", "adds"),
            icp_max_iter=icp.number("max_iter", 50, integer=True),
            icp_gate=icp.number("gate", 3.0),
            icp_tol=icp.number("tol", 1e-9, length=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"pipeline: {exc}") from None
    ms.done()
    icp.done()
    return cfg, s


def parse_pipeline(doc: dict, unit: str | None = None) -> PipelineConfig:
    cfg, s = _pipeline_section(doc, unit)
    s.done()
    return cfg


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Pipeline settings plus where the inputs come from.

    Either ``scene`` is set (votes are synthesized) or ``votes_path`` and
    ``keypoints_path`` are.  ``model``/``cloud`` are needed for ICP and for
    scoring against ``gt_pose``.
    """

    pipeline: PipelineConfig
    scene: SyntheticScene | None = None
    votes_path: Path | None = None
    keypoints_path: Path | None = None
    model: PointCloud | None = None
    cloud_path: Path | None = None
    gt_pose: Pose | None = None


def parse_run(doc: dict, base: Path = Path("."), unit: str | None = None, seed: int = 0) -> RunConfig:
    cfg, s = _pipeline_section(doc, unit)
    _, scale = _file_unit(doc, "config", unit)
    scene = model = gt = None
    votes = kp = cloud = None
    if s.has("scene"):
        sc = s.raw("scene")
        if isinstance(sc, str):
            path = _resolve(base, sc)
            scene = parse_scene(read_json(path), path.parent, unit, seed)
        else:
            scene = parse_scene(sc, base, unit, seed)
        model, gt = scene.model, scene.pose
        for key in ("votes", "keypoints", "model", "cloud", "gt_pose"):
            if s.has(key):
                raise ConfigError(f"config: '{key}' cannot be combined with 'scene'")
    elif s.has("votes"):
        votes = _resolve(base, s.text("votes"))
        if not s.has("keypoints"):
            raise ConfigError("config: 'votes' needs a matching 'keypoints' file")
        kp = _resolve(base, s.text("keypoints"))
        if s.has("model"):
            model, _ = load_model(s.raw("model"), base)
        if s.has("cloud"):
            cloud = _resolve(base, s.text("cloud"))
        if s.has("gt_pose"):
            gt = parse_pose(s.raw("gt_pose"), "config.gt_pose", scale)
    else:
        raise ConfigError("config: provide either 'scene' or 'votes' + 'keypoints'")
    s.done()
    if cfg.use_icp and scene is None and (model is None or cloud is None):
        raise ConfigError("config: irls+icp on recorded votes needs 'model' and 'cloud'")
    return RunConfig(cfg, scene, votes, kp, model, cloud, gt)


def load_run_config(path, unit: str | None = None, seed: int = 0) -> RunConfig:
    path = Path(path)
    return parse_run(read_json(path), path.parent, unit, seed)


def load_scene(path, unit: str | None = None, seed: int = 0) -> SyntheticScene:
    path = Path(path)
    return parse_scene(read_json(path), path.parent, unit, seed)


@dataclass(frozen=True, eq=False)
class ServoScenario:
    initial: Pose
    desired: Pose
    servo: ServoConfig
    estimator: str = "auto"          # auto | exact | noisy | pipeline
    scene: SyntheticScene | None = None
    pipeline: PipelineConfig | None = None


def parse_servo(doc: dict, base: Path = Path("."), unit: str | None = None, seed: int = 0) -> ServoScenario:
    """Servo scenario.  The start is either ``initial`` (an object pose) or
    ``delta`` (the error to be removed, as the transform from the current to
    the desired camera)."""
    _, scale = _file_unit(doc, "servo", unit)
    s = _Section(doc, "servo", scale)
    s.raw("unit")
    desired = (parse_pose(s.raw("desired"), "servo.desired", scale) if s.has("desired")
               else Pose(np.eye(3), [0.0, 0.0, DEFAULT_OBJECT_DISTANCE]))
    if s.has("initial") == s.has("delta"):
        raise ConfigError("servo: give exactly one of 'initial' or 'delta'")
    if s.has("initial"):
        initial = parse_pose(s.raw("initial"), "servo.initial", scale)
    else:
        from .servoing import initial_from_delta

        initial = initial_from_delta(parse_pose(s.raw("delta"), "servo.delta", scale), desired)
    c = _Section(s.raw("control", {}), "servo.control", scale)
    servo = ServoConfig(
        gain=c.number("gain", 0.5),
        dt=c.number("dt", 0.01),
        max_steps=c.number("max_steps", 5000, integer=True),
        tol_t=c.number("tol_t", 1e-3, length=True),
        tol_r=math.radians(c.number("tol_r_deg", math.degrees(ServoConfig.tol_r))),
        noise_t=c.number("noise_t", 0.0, length=True),
        noise_r=math.radians(c.number("noise_r_deg", 0.0)),
        seed=c.number("seed", seed, integer=True),
        divergence_factor=c.number("divergence_factor", 2.0),
        divergence_floor=c.number("divergence_floor", 0.01),
    )
    c.done()
    estimator = s.text("estimator", "auto", choices={"auto", "exact", "noisy", "pipeline"})
    scene = pipe = None
    if estimator == "pipeline":
        sc = s.raw("scene", {})
        if isinstance(sc, str):
            path = _resolve(base, sc)
            scene = parse_scene(read_json(path), path.parent, unit, seed)
        else:
            scene = parse_scene(sc, base, unit, seed)
        pipe = parse_pipeline(s.raw("pipeline", {}), unit)
    s.done()
    return ServoScenario(initial, desired, servo, estimator, scene, pipe)


def load_servo(path, unit: str | None = None, seed: int = 0) -> ServoScenario:
    path = Path(path)
    return parse_servo(read_json(path), path.parent, unit, seed)
