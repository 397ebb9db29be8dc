import numpy as np
import pytest

from patchvote.errors import ConfigError, DegenerateGeometryError, EmptySceneError, PatchVoteError
from patchvote.geometry import rotation_angle_between
from patchvote.keypoints import KeypointSet
from patchvote.pipeline import PipelineConfig, estimate_pose, pipeline_estimator
from patchvote.votes import VoteSet, load_votes, save_votes, scene_cloud, synthesize


def pose_error(T, T_gt):
    return np.linalg.norm(T.t - T_gt.t) * 1e3, np.degrees(rotation_angle_between(T.R, T_gt.R))


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"registration": "ransac"}, {"metric": "2d"}, {"cluster_k": 2}, {"icp_max_iter": 0}, {"icp_gate": 0.0},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            PipelineConfig(**kw)


class TestEstimate:
    @pytest.mark.parametrize("mode", ["svd", "irls", "irls+icp"])
    def test_zero_noise_exact(self, clean_scene, mode):
        syn = synthesize(clean_scene)
        cloud = scene_cloud(clean_scene)
        out = estimate_pose(syn.votes, clean_scene.keypoints, PipelineConfig(registration=mode),
                            model=clean_scene.model, scene=cloud)
        dt_mm, dr_deg = pose_error(out.pose, clean_scene.pose)
        assert dt_mm < 1e-6 and dr_deg < 1e-6

    def test_calibrated_noise_correct(self, scene):
        from patchvote.evaluation import adds_metric, pose_correct
        from patchvote.keypoints import diameter

        sc = scene.with_(max_patches=100, seed=17)
        out = estimate_pose(synthesize(sc).votes, sc.keypoints)
        assert pose_correct(adds_metric(sc.model, out.pose, sc.pose), diameter(sc.model) * 1e3)

    def test_votes_file_round_trip(self, scene, tmp_path):
        sc = scene.with_(max_patches=100, seed=4)
        votes = synthesize(sc).votes
        path = tmp_path / "v.csv"
        save_votes(votes, path)
        loaded = load_votes(path)
        a = estimate_pose(loaded, sc.keypoints).pose
        save_votes(loaded, tmp_path / "w.csv")
        b = estimate_pose(load_votes(tmp_path / "w.csv"), sc.keypoints).pose
        assert np.array_equal(a.as_matrix(), b.as_matrix())
        ref = estimate_pose(votes, sc.keypoints).pose
        assert pose_error(a, ref)[0] < 1e-3

    def test_timings_and_stages(self, scene):
        sc = scene.with_(max_patches=50)
        cfg = PipelineConfig(registration="irls+icp")
        out = estimate_pose(synthesize(sc).votes, sc.keypoints, cfg, model=sc.model, scene=scene_cloud(sc))
        assert set(out.timings_ms) == {"agg", "reg", "icp"}
        assert out.total_ms == pytest.approx(sum(out.timings_ms.values()))
        assert out.icp is not None and out.coarse_pose is out.registration.pose

    def test_cluster_selection(self, scene):
        sc = scene.with_(max_patches=100)
        out = estimate_pose(synthesize(sc).votes, sc.keypoints, PipelineConfig(cluster_k=5))
        assert len(out.clusters) == 5
        assert len(set(out.clusters.tolist())) == 5

    def test_three_clusters_use_svd(self, scene):
        sc = scene.with_(max_patches=100)
        out = estimate_pose(synthesize(sc).votes, sc.keypoints, PipelineConfig(cluster_k=3))
        assert any("plain SVD" in n for n in out.notes)

    def test_keypoint_count_mismatch(self, scene):
        votes = synthesize(scene.with_(max_patches=10)).votes
        kps = KeypointSet(scene.keypoints.points[:5])
        with pytest.raises(ConfigError) as info:
            estimate_pose(votes, kps)
        assert info.value.stage == "input"

    def test_icp_needs_clouds(self, scene):
        votes = synthesize(scene.with_(max_patches=10)).votes
        with pytest.raises(ConfigError):
            estimate_pose(votes, scene.keypoints, PipelineConfig(registration="irls+icp"))

    def test_degenerate_votes_carry_stage_and_hint(self, cube_keypoints):
        # every keypoint aggregated to the same spot: nothing to align
        P = np.zeros((4, 9, 3))
        with pytest.raises(DegenerateGeometryError) as info:
            estimate_pose(VoteSet(P), cube_keypoints)
        assert info.value.stage == "registration"
        assert info.value.hint

    def test_empty_scene_surfaces(self, scene):
        with pytest.raises(EmptySceneError):
            synthesize(scene.with_(tpr=0.0, tnr=1.0))


class TestPipelineEstimator:
    def test_fresh_noise_per_call_and_reproducible(self, scene):
        sc = scene.with_(max_patches=60, seed=8)
        e1, e2 = pipeline_estimator(sc), pipeline_estimator(sc)
        a1, a2 = e1(sc.pose), e1(sc.pose)
        b1 = e2(sc.pose)
        assert np.array_equal(a1.as_matrix(), b1.as_matrix())
        assert not np.array_equal(a1.as_matrix(), a2.as_matrix())
        assert pose_error(a1, sc.pose)[0] < 10.0

    def test_errors_are_patchvote_errors(self, scene):
        est = pipeline_estimator(scene.with_(tpr=0.0, tnr=1.0))
        with pytest.raises(PatchVoteError):
            est(scene.pose)
