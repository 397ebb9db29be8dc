import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.distance import pdist

from patchvote.errors import ParseError
from patchvote.keypoints import (KeypointSet, PointCloud, diameter, farthest_point_sample, load_keypoints,
                                 read_ply, save_keypoints, write_ply)

CUBE_CORNERS = np.array(list(itertools.product([0.0, 1.0], repeat=3)))

clouds = arrays(np.float64, st.tuples(st.integers(12, 60), st.just(3)),
                elements=st.floats(-1, 1, allow_nan=False, width=32), unique=False)


def brute_force_fps(pts, M, seed_index):
    """Greedy max-min by exhaustive scan over every candidate at every step."""
    chosen = [seed_index]
    for _ in range(1, M):
        best, best_d = None, -1.0
        for i in range(len(pts)):
            d = min(np.linalg.norm(pts[i] - pts[c]) for c in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


class TestPointCloud:
    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud([[0.0, np.inf, 0.0]])

    def test_keypoints_must_be_distinct(self):
        with pytest.raises(ValueError):
            KeypointSet([[0, 0, 0], [1, 0, 0], [0, 0, 0]])


class TestFarthestPointSample:
    def test_all_corners_when_exhausted(self):
        kps = farthest_point_sample(PointCloud(CUBE_CORNERS), 8)
        assert sorted(map(tuple, kps.points)) == sorted(map(tuple, CUBE_CORNERS))

    def test_cube_corners_four_match_greedy_oracle(self):
        # from (0,0,0) the first pick is the opposite corner (1,1,1), so greedy
        # cannot return a regular tetrahedron; check against the exhaustive greedy
        kps = farthest_point_sample(PointCloud(CUBE_CORNERS), 4, seed_index=0)
        assert list(kps.indices) == brute_force_fps(CUBE_CORNERS, 4, 0)
        np.testing.assert_array_equal(kps.points, CUBE_CORNERS[[0, 7, 1, 2]])
        np.testing.assert_allclose(kps.min_distances[1:], [np.sqrt(3), 1.0, 1.0])

    def test_default_is_nine(self, cube):
        assert farthest_point_sample(cube).M == 9

    @pytest.mark.parametrize("seed_index", [0, 17, 299])
    def test_matches_brute_force_on_model(self, lshape, seed_index):
        pts = lshape.points[:300]
        kps = farthest_point_sample(PointCloud(pts), 9, seed_index)
        assert list(kps.indices) == brute_force_fps(pts, 9, seed_index)

    def test_ties_go_to_lowest_index(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]], dtype=float)
        kps = farthest_point_sample(PointCloud(pts), 2)
        assert kps.indices[1] == 1

    def test_m_too_large(self):
        with pytest.raises(ValueError, match="M=9.*8 points"):
            farthest_point_sample(PointCloud(CUBE_CORNERS), 9)

    def test_bad_seed_index(self):
        with pytest.raises(ValueError):
            farthest_point_sample(PointCloud(CUBE_CORNERS), 3, seed_index=8)

    def test_large_cloud_is_subsampled(self, rng):
        pts = rng.normal(size=(120_001, 3))
        kps = farthest_point_sample(PointCloud(pts), 5)
        assert kps.subsample_stride == 3
        assert all(i % 3 == 0 for i in kps.indices)
        np.testing.assert_array_equal(kps.points, pts[kps.indices])

    @settings(max_examples=50, deadline=None)
    @given(pts=clouds)
    def test_min_distances_non_increasing(self, pts):
        pts = np.unique(pts, axis=0)
        if len(pts) < 9:
            return
        kps = farthest_point_sample(PointCloud(pts), 9)
        gaps = kps.min_distances[1:]
        assert np.all(np.diff(gaps) <= 1e-15)

    @settings(max_examples=50, deadline=None)
    @given(pts=clouds)
    def test_covering_radius(self, pts):
        pts = np.unique(pts, axis=0)
        if len(pts) < 10:
            return
        kps = farthest_point_sample(PointCloud(pts), 9)
        d = np.linalg.norm(pts[:, None] - kps.points[None], axis=2).min(axis=1)
        # the next greedy pick would be the farthest point, at most the last gap away
        assert d.max() <= kps.min_distances[-1] + 1e-12


class TestDiameter:
    def test_two_points(self):
        assert diameter(PointCloud([[0, 0, 0], [1, 0, 0]])) == 1.0

    def test_cube_corners(self):
        assert diameter(PointCloud(CUBE_CORNERS)) == pytest.approx(np.sqrt(3), abs=1e-15)

    def test_single_point_rejected(self):
        with pytest.raises(ValueError):
            diameter(PointCloud([[1, 2, 3]]))

    @pytest.mark.parametrize("n", [100, 1000])
    def test_matches_brute_force(self, rng, n):
        pts = rng.normal(size=(n, 3))
        assert diameter(PointCloud(pts)) == pdist(pts).max()

    def test_hull_path_matches_brute_force(self, rng):
        pts = rng.normal(size=(12_000, 3))
        assert diameter(PointCloud(pts)) == pytest.approx(pdist(pts).max(), rel=1e-12)

    def test_lower_bound(self, cube):
        c = cube.points.mean(axis=0)
        assert diameter(cube) >= np.linalg.norm(cube.points - c, axis=1).max()


class TestPlyIO:
    def test_round_trip_with_normals(self, tmp_path, cube):
        path = tmp_path / "m.ply"
        write_ply(cube, path, unit="mm")
        back = read_ply(path)
        np.testing.assert_allclose(back.points, cube.points, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(back.normals, cube.normals, atol=1e-8)

    def test_unit_override(self, tmp_path):
        path = tmp_path / "m.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                        "property float z\nend_header\n10 20 30\n")
        np.testing.assert_allclose(read_ply(path).points, [[10, 20, 30]])
        np.testing.assert_allclose(read_ply(path, unit="mm").points, [[0.01, 0.02, 0.03]])

    def test_faces_after_vertices_are_skipped(self, tmp_path):
        path = tmp_path / "m.ply"
        path.write_text("ply\nformat ascii 1.0\ncomment unit mm\nelement vertex 3\nproperty float x\n"
                        "property float y\nproperty float z\nelement face 1\n"
                        "property list uchar int vertex_indices\nend_header\n"
                        "0 0 0\n1000 0 0\n0 1000 0\n3 0 1 2\n")
        assert len(read_ply(path)) == 3
        assert diameter(read_ply(path)) == pytest.approx(np.sqrt(2))

    @pytest.mark.parametrize("body,line", [
        ("0 0 0\n1 1\n", 9),
        ("0 0 0\n1 x 1\n", 9),
        ("0 0 0\n", 9),
    ])
    def test_errors_carry_line_numbers(self, tmp_path, body, line):
        path = tmp_path / "bad.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                        "property float z\nend_header\n" + body)
        with pytest.raises(ParseError) as err:
            read_ply(path)
        assert err.value.line == line
        assert f"bad.ply:{line}:" in str(err.value)

    def test_binary_rejected(self, tmp_path):
        path = tmp_path / "b.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(ParseError, match="ASCII"):
            read_ply(path)


class TestKeypointFile:
    def test_round_trip(self, tmp_path, cube_keypoints):
        path = tmp_path / "k.json"
        save_keypoints(cube_keypoints, path, model_path="cube.ply")
        doc = json.loads(path.read_text())
        assert doc["M"] == 9 and doc["unit"] == "m" and doc["seed_index"] == 0
        back = load_keypoints(path)
        np.testing.assert_allclose(back.points, cube_keypoints.points, rtol=1e-11)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "k.json"
        path.write_text(json.dumps({"M": 4, "unit": "m", "points": [[0, 0, 0], [1, 0, 0], [0, 1, 0]]}))
        with pytest.raises(ParseError, match="M=4"):
            load_keypoints(path)

    def test_millimeter_file(self, tmp_path):
        path = tmp_path / "k.json"
        path.write_text(json.dumps({"M": 3, "unit": "mm", "points": [[0, 0, 0], [100, 0, 0], [0, 100, 0]]}))
        np.testing.assert_allclose(load_keypoints(path).points[1], [0.1, 0, 0])
