"""Pose metrics, the 10%-of-diameter criterion and the Monte-Carlo benchmark harness.

Metrics are reported in millimeters; everything internal is meters.  Standard
deviations are population (``ddof=0``) values.
"""

from __future__ import annotations

import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, random_rotation
from .keypoints import KeypointSet, PointCloud, diameter
from .pipeline import PipelineConfig, estimate_pose
from .votes import SyntheticScene, scene_cloud, synthesize
from .errors import PatchVoteError

CORRECT_FRACTION = 0.1

TRIAL_CSV_HEADER = ["trial", "seed", "add_mm", "adds_mm", "correct", "reg_mean_mm", "reg_std_mm",
                    "t_synth_ms", "t_agg_ms", "t_reg_ms", "t_icp_ms"]
STAGES = ("synth", "agg", "reg", "icp")


def add_metric(model: PointCloud, T_est: Pose, T_gt: Pose) -> float:
    """Mean distance between corresponding model points under both poses (mm)."""
    d = np.linalg.norm(T_est.apply(model.points) - T_gt.apply(model.points), axis=1)
    return float(d.mean() * 1e3)


def adds_metric(model: PointCloud, T_est: Pose, T_gt: Pose) -> float:
    """Mean closest-point distance from the estimated to the true model placement (mm)."""
    d, _ = cKDTree(T_gt.apply(model.points)).query(T_est.apply(model.points))
    return float(d.mean() * 1e3)


def pose_correct(value_mm: float, diameter_mm: float) -> bool:
    if not diameter_mm > 0:
        raise ValueError("diameter must be positive")
    return bool(value_mm < CORRECT_FRACTION * diameter_mm)


def regression_error_stats(estimated, T_gt: Pose, keypoints: KeypointSet):
    """``(mean_mm, std_mm, per_point_mm)`` of aggregated keypoint errors."""
    pts = getattr(estimated, "points", estimated)
    pts = np.asarray(pts, dtype=float)
    if pts.shape != keypoints.points.shape:
        raise ValueError("estimated keypoints and reference keypoints differ in count")
    err = np.linalg.norm(pts - T_gt.apply(keypoints.points), axis=1) * 1e3
    return float(err.mean()), float(err.std()), err


@dataclass
class PoseTrialReport:
    trial: int
    seed: int
    add_mm: float = math.nan
    adds_mm: float = math.nan
    correct: bool = False
    reg_errors_mm: list = field(default_factory=list)
    reg_mean_mm: float = math.nan
    reg_std_mm: float = math.nan
    timings_ms: dict = field(default_factory=dict)
    n_patches: int = 0
    n_object: int = 0
    n_background: int = 0
    true_positives: int = 0
    false_positives: int = 0
    error: str | None = None


@dataclass
class BenchmarkSummary:
    trials: int
    failures: int
    pass_rate: float
    metric: str
    diameter_mm: float
    mean_add_mm: float
    mean_adds_mm: float
    reg_mean_mm: float
    reg_std_mm: float
    tpr: float
    tnr: float
    mean_patches: float
    timings_ms: dict
    std_convention: str = "population"

    def to_dict(self) -> dict:
        return asdict(self)


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


def sample_pose(rng: np.random.Generator, center, jitter: float) -> Pose:
    """Uniform random orientation at ``center`` plus a uniform box jitter (meters)."""
    t = np.asarray(center, dtype=float) + rng.uniform(-jitter, jitter, size=3)
    return Pose(random_rotation(rng), t)


def run_trial(template: SyntheticScene, cfg: PipelineConfig, trial: int, seed: int,
              randomize_pose: bool = True, jitter: float = 0.05,
              diameter_m: float | None = None) -> PoseTrialReport:
    """One synthetic frame through the full pipeline; errors are captured, not raised."""
    report = PoseTrialReport(trial=trial, seed=seed)
    scene = template.with_(seed=seed)
    if randomize_pose:
        scene = scene.with_(pose=sample_pose(np.random.default_rng([seed, 11]), template.pose.t, jitter))
    D = diameter(scene.model) if diameter_m is None else diameter_m
    try:
        t0 = time.perf_counter()
        syn = synthesize(scene)
        cloud = scene_cloud(scene) if cfg.use_icp else None
        t_synth = (time.perf_counter() - t0) * 1e3
        report.n_patches = syn.votes.N
        report.n_object, report.n_background = syn.n_object, syn.n_background
        report.true_positives, report.false_positives = syn.true_positives, syn.false_positives
        out = estimate_pose(syn.votes, scene.keypoints, cfg, model=scene.model, scene=cloud)
    except PatchVoteError as exc:
        report.error = str(exc)
        return report
    report.timings_ms = {"synth": t_synth, **out.timings_ms}
    report.add_mm = add_metric(scene.model, out.pose, scene.pose)
    report.adds_mm = adds_metric(scene.model, out.pose, scene.pose)
    value = report.adds_mm if cfg.metric == "adds" else report.add_mm
    report.correct = pose_correct(value, D * 1e3)
    mean, std, per = regression_error_stats(out.aggregated, scene.pose, scene.keypoints)
    report.reg_mean_mm, report.reg_std_mm, report.reg_errors_mm = mean, std, per.tolist()
    return report


def summarize(reports: list[PoseTrialReport], metric: str, diameter_mm: float) -> BenchmarkSummary:
    ok = [r for r in reports if r.error is None]
    n = len(reports)

    def mean_of(vals):
        return float(np.mean(vals)) if len(vals) else math.nan

    errs = np.concatenate([r.reg_errors_mm for r in ok]) if ok else np.array([])
    n_obj = sum(r.n_object for r in ok)
    n_bg = sum(r.n_background for r in ok)
    tp = sum(r.true_positives for r in ok)
    fp = sum(r.false_positives for r in ok)
    timings = {s: mean_of([r.timings_ms.get(s, 0.0) for r in ok]) for s in STAGES}
    timings["total"] = mean_of([sum(r.timings_ms.values()) for r in ok])
    return BenchmarkSummary(
        trials=n,
        failures=n - len(ok),
        pass_rate=100.0 * sum(r.correct for r in reports) / n,
        metric=metric,
        diameter_mm=diameter_mm,
        mean_add_mm=mean_of([r.add_mm for r in ok]),
        mean_adds_mm=mean_of([r.adds_mm for r in ok]),
        reg_mean_mm=mean_of(errs),
        reg_std_mm=float(errs.std()) if len(errs) else math.nan,
        tpr=tp / n_obj if n_obj else math.nan,
        tnr=1.0 - fp / n_bg if n_bg else math.nan,
        mean_patches=mean_of([r.n_patches for r in ok]),
        timings_ms=timings,
    )


def run_benchmark(template: SyntheticScene, trials: int, seed: int = 0,
                  cfg: PipelineConfig = PipelineConfig(), threads: int = 1,
                  randomize_pose: bool = True, jitter: float = 0.05):
    """Run ``trials`` seeded trials; returns ``(reports, summary)``.

    Trial ``i`` draws everything from ``trial_seed(seed, i)``, so results do
    not depend on ``threads``.
    """
    if trials < 1:
        raise ValueError("trial count must be at least 1")
    D = diameter(template.model)
    seeds = [trial_seed(seed, i) for i in range(trials)]

    def one(i):
        return run_trial(template, cfg, i, seeds[i], randomize_pose, jitter, D)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, range(trials)))
    else:
        reports = [one(i) for i in range(trials)]
    return reports, summarize(reports, cfg.metric, D * 1e3)


SWEEP_AXES = ("none", "stride", "sigma", "outliers", "patchcount")
DEFAULT_SWEEP_VALUES = {
    "stride": [4, 8, 12, 16, 20, 24],
    "sigma": [10.0, 20.0, 40.0, 80.0],       # mean-shift bandwidth, mm
    "outliers": [0.0, 0.1, 0.2, 0.3, 0.4],  # p_out
    "patchcount": [1, 5, 20, 50, 100],        # max_patches
}


def sweep_variant(template: SyntheticScene, cfg: PipelineConfig, axis: str, value):
    """Scene and pipeline config with one sweep axis set to ``value``."""
    if axis == "stride":
        return template.with_(stride=int(value)), cfg
    if axis == "sigma":
        return template, replace(cfg, mean_shift=replace(cfg.mean_shift, bandwidth=float(value) * 1e-3))
    if axis == "outliers":
        return template.with_(p_out=float(value)), cfg
    if axis == "patchcount":
        return template.with_(max_patches=int(value)), cfg
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sweep(template: SyntheticScene, axis: str, values, trials: int, seed: int = 0,
              cfg: PipelineConfig = PipelineConfig(), threads: int = 1, randomize_pose: bool = True):
    """Benchmark each value of one axis with identical trial seeds."""
    out = []
    for v in values:
        scene, c = sweep_variant(template, cfg, axis, v)
        reports, summary = run_benchmark(scene, trials, seed, c, threads, randomize_pose)
        out.append((v, reports, summary))
    return out


# ------------------------------------------------------------------ reports


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.9g}"


def format_trial_csv(reports: list[PoseTrialReport], record_timings: bool = False) -> str:
    """Per-trial CSV.  Timing columns stay empty unless ``record_timings``
    because wall-clock values would break byte-for-byte reproducibility."""
    buf = io.StringIO()
    buf.write(",".join(TRIAL_CSV_HEADER) + "\n")
    for r in reports:
        t = r.timings_ms if record_timings else {}
        row = [r.trial, r.seed, r.add_mm, r.adds_mm, r.correct, r.reg_mean_mm, r.reg_std_mm,
               t.get("synth"), t.get("agg"), t.get("reg"), t.get("icp", 0.0 if t else None)]
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def format_sweep_csv(axis: str, results, record_timings: bool = False) -> str:
    buf = io.StringIO()
    buf.write(f"{axis},trials,pass_rate,mean_adds_mm,mean_add_mm,reg_mean_mm,mean_patches,total_ms\n")
    for v, _, s in results:
        row = [v, s.trials, s.pass_rate, s.mean_adds_mm, s.mean_add_mm, s.reg_mean_mm, s.mean_patches,
               s.timings_ms["total"] if record_timings else None]
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def summary_json(summary: BenchmarkSummary, record_timings: bool = False, **extra) -> str:
    """Summary as JSON text.  Timings are null unless ``record_timings``, for
    the same reproducibility reason as in the per-trial CSV."""
    doc = summary.to_dict()
    if not record_timings:
        doc["timings_ms"] = None
    doc.update(extra)

    def clean(o):
        if isinstance(o, float) and math.isnan(o):
            return None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, list):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(doc), indent=2, sort_keys=True) + "\n"
