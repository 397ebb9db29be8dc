import numpy as np
import pytest
from scipy.spatial import cKDTree

from patchvote.keypoints import diameter
from patchvote.models import BUILTIN_MODELS, builtin_model


@pytest.mark.parametrize("name", sorted(BUILTIN_MODELS))
class TestBuiltinModels:
    def test_diameter_and_size(self, name):
        m = builtin_model(name, n_points=800, target_diameter=0.1)
        assert len(m) == 800
        assert diameter(m) == pytest.approx(0.1, rel=1e-9)

    def test_unit_normals(self, name):
        m = builtin_model(name, n_points=500)
        np.testing.assert_allclose(np.linalg.norm(m.normals, axis=1), 1.0, atol=1e-12)

    def test_deterministic(self, name):
        a, b = builtin_model(name, 300), builtin_model(name, 300)
        np.testing.assert_array_equal(a.points, b.points)


def test_plate_is_half_turn_symmetric(plate):
    flipped = plate.points * [-1.0, -1.0, 1.0]
    d, _ = cKDTree(plate.points).query(flipped)
    assert d.max() < 1e-12


def test_l_shape_is_not_half_turn_symmetric(lshape):
    flipped = lshape.points * [-1.0, -1.0, 1.0]
    d, _ = cKDTree(lshape.points).query(flipped)
    assert d.mean() > 1e-3


def test_unknown_model():
    with pytest.raises(ValueError):
        builtin_model("teapot")
