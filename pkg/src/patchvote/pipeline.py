"""Votes -> keypoints -> pose, with per-stage timing and error context."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregatedKeypoints, MeanShiftConfig, aggregate, select_low_variance_clusters
from .errors import ConfigError, PatchVoteError
from .geometry import Pose
from .keypoints import KeypointSet, PointCloud
from .registration import RegistrationResult, icp_refine, procrustes_irls, procrustes_svd
from .votes import VoteSet, visible_points

REGISTRATION_MODES = ("svd", "irls", "irls+icp")
METRICS = ("add", "adds")


@dataclass(frozen=True)
class PipelineConfig:
    mean_shift: MeanShiftConfig = MeanShiftConfig()
    registration: str = "irls"
    cluster_k: int | None = None
    metric: str = "adds"
    icp_max_iter: int = 50
    icp_gate: float = 3.0
    icp_tol: float = 1e-9

    def __post_init__(self):
        if self.registration not in REGISTRATION_MODES:
            raise ConfigError(f"registration must be one of {REGISTRATION_MODES}, got {self.registration!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.cluster_k is not None and self.cluster_k < 3:
            raise ConfigError("cluster_k must be at least 3")
        if self.icp_max_iter < 1 or not self.icp_gate > 0:
            raise ConfigError("icp max_iter must be >= 1 and gate > 0")

    @property
    def use_icp(self) -> bool:
        return self.registration == "irls+icp"


@dataclass(eq=False)
class EstimateOutput:
    pose: Pose
    aggregated: AggregatedKeypoints
    registration: RegistrationResult
    icp: RegistrationResult | None = None
    clusters: np.ndarray | None = None
    coarse_pose: Pose | None = None
    timings_ms: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def total_ms(self) -> float:
        return float(sum(self.timings_ms.values()))


@contextmanager
def _stage(name: str, hint: str):
    """Attach the stage name and a remediation hint to errors raised inside."""
    try:
        yield
    except PatchVoteError as exc:
        if exc.stage is None:
            exc.stage = name
        if exc.hint is None:
            exc.hint = hint
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), stage=name, hint=hint) from exc


def estimate_pose(votes: VoteSet, keypoints: KeypointSet, cfg: PipelineConfig = PipelineConfig(),
                  model: PointCloud | None = None, scene: PointCloud | None = None) -> EstimateOutput:
    """Aggregate the votes, optionally keep the tightest clusters, and register.

    ``model`` (object frame) and ``scene`` (camera frame) are required for
    ICP refinement.
    """
    if votes.M != keypoints.M:
        raise ConfigError(f"votes carry {votes.M} keypoints but the keypoint set has {keypoints.M}",
                          stage="input", hint="regenerate votes with the same keypoint file")
    if cfg.use_icp and (model is None or scene is None):
        raise ConfigError("irls+icp needs both a model cloud and a scene cloud", stage="input")
    timings = {}
    notes = []

    t0 = time.perf_counter()
    with _stage("aggregation", "increase the mean-shift bandwidth or check the vote file"):
        agg = aggregate(votes, cfg.mean_shift)
    timings["agg"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    with _stage("registration", "keypoints must not be collinear; check for corrupted votes"):
        idx = np.arange(agg.M)
        if cfg.cluster_k is not None:
            idx = select_low_variance_clusters(agg, min(cfg.cluster_k, agg.M))
        X = keypoints.points[idx]
        Y = agg.points[idx]
        if cfg.registration == "svd" or len(idx) < 4:
            if cfg.registration != "svd":
                notes.append("fewer than 4 correspondences: plain SVD used instead of IRLS")
            reg = procrustes_svd(X, Y)
        else:
            reg = procrustes_irls(X, Y)
        if reg.fallback:
            notes.append("IRLS residual scale was zero; fell back to unweighted SVD")
    timings["reg"] = (time.perf_counter() - t0) * 1e3

    pose = reg.pose
    icp = None
    if cfg.use_icp:
        t0 = time.perf_counter()
        with _stage("icp", "the coarse pose may be too far off; try plain irls"):
            src = model
            if model.normals is not None:
                _, vis = visible_points(model, pose)
                if len(vis) >= 3:
                    src = model.subset(vis)
            icp = icp_refine(src, scene, pose, max_iter=cfg.icp_max_iter, gate=cfg.icp_gate, tol=cfg.icp_tol)
            pose = icp.pose
        timings["icp"] = (time.perf_counter() - t0) * 1e3
    return EstimateOutput(pose, agg, reg, icp, idx, reg.pose, timings, notes)


def pipeline_estimator(scene, cfg: PipelineConfig = PipelineConfig()):
    """Pose estimator that re-synthesizes votes at the true pose on every call.

    Call ``k`` uses the scene seed offset by ``k``, so a servo run is
    reproducible while successive frames get fresh noise.
    """
    from .votes import scene_cloud, synthesize

    calls = [0]

    def estimate(T_true: Pose) -> Pose:
        frame = scene.with_(pose=T_true, seed=scene.seed + calls[0])
        calls[0] += 1
        syn = synthesize(frame)
        cloud = scene_cloud(frame) if cfg.use_icp else None
        return estimate_pose(syn.votes, frame.keypoints, cfg, model=frame.model, scene=cloud).pose

    return estimate
