import numpy as np
import pytest

from patchvote.config import DEFAULT_INTRINSICS
from patchvote.geometry import Pose, random_rotation
from patchvote.keypoints import farthest_point_sample
from patchvote.models import builtin_model
from patchvote.votes import SyntheticScene


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cube():
    return builtin_model("cube_bumps", n_points=2000, target_diameter=0.25)


@pytest.fixture(scope="session")
def lshape():
    return builtin_model("l_shape", n_points=1000, target_diameter=0.25)


@pytest.fixture(scope="session")
def plate():
    return builtin_model("plate", n_points=1000, target_diameter=0.25)


@pytest.fixture(scope="session")
def cube_keypoints(cube):
    return farthest_point_sample(cube, 9)


@pytest.fixture(scope="session")
def scene(cube, cube_keypoints):
    pose = Pose.from_rotvec(np.radians([20.0, -35.0, 10.0]), [0.02, -0.01, 0.7])
    return SyntheticScene(pose, cube, cube_keypoints, DEFAULT_INTRINSICS)


@pytest.fixture(scope="session")
def clean_scene(scene):
    return scene.with_(sigma_v=0.0, p_out=0.0, tpr=1.0, tnr=1.0, sigma_z=0.0)


def random_pose(rng, scale=0.5):
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))
