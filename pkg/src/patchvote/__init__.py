"""Geometric core of patch-voting 6-DoF pose estimation.

Votes for keypoint positions (synthetic or loaded from CSV) are aggregated by
mean-shift, registered with Procrustes/IRLS/ICP, scored with ADD/ADD-S and
optionally fed to a position-based visual servoing simulation.
"""

from .aggregation import AggregatedKeypoints, MeanShiftConfig, aggregate
from .errors import PatchVoteError
from .evaluation import add_metric, adds_metric, pose_correct, run_benchmark
from .geometry import CameraIntrinsics, Pose, PoseError, backproject, pose_delta
from .keypoints import KeypointSet, PointCloud, diameter, farthest_point_sample
from .pipeline import PipelineConfig, estimate_pose
from .registration import icp_refine, procrustes_irls, procrustes_svd
from .servoing import ServoConfig, run_servo
from .votes import SyntheticScene, VoteSet, synthesize

__version__ = "0.1.0"

__all__ = [
    "AggregatedKeypoints", "CameraIntrinsics", "KeypointSet", "MeanShiftConfig", "PatchVoteError",
    "PipelineConfig", "PointCloud", "Pose", "PoseError", "ServoConfig", "SyntheticScene", "VoteSet",
    "add_metric", "adds_metric", "aggregate", "backproject", "diameter", "estimate_pose",
    "farthest_point_sample", "icp_refine", "pose_correct", "pose_delta", "procrustes_irls",
    "procrustes_svd", "run_benchmark", "run_servo", "synthesize",
]
