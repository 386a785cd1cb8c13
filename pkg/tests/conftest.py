import numpy as np
import pytest

from app.modules.synthetic.engine import gen_scene
from app.modules.synthetic.schemas import BoxSpec, SceneSpec

CAMERA_HEIGHT = 1.65

# Driving-camera geometry; the principal point sits between pixel centres
# so no row lies exactly on the horizon.
WIDE_CAMERA = dict(width=640, height=192, fx=370.0, fy=370.0, cx=319.5, cy=95.5)
SMALL_CAMERA = dict(width=128, height=96, fx=60.0, fy=60.0, cx=63.5, cy=47.5)


def make_spec(camera=SMALL_CAMERA, **overrides) -> SceneSpec:
    values = {**camera, "camera_height": CAMERA_HEIGHT}
    values.update(overrides)
    return SceneSpec(**values)


def occluder(width: float, z: float = 8.0) -> BoxSpec:
    """Box standing on the ground, taller than the camera so its top is never seen."""
    return BoxSpec(center=(0.0, CAMERA_HEIGHT - 1.5, z), size=(width, 3.0, 1.0))


@pytest.fixture
def spec_factory():
    return make_spec


@pytest.fixture(scope="session")
def wide_flat_scene():
    return gen_scene(make_spec(WIDE_CAMERA))


@pytest.fixture(scope="session")
def flat_scene():
    return gen_scene(make_spec())


@pytest.fixture(scope="session")
def wall_scene():
    # Ground would be met beyond the wall everywhere, so only the wall is visible
    return gen_scene(make_spec(camera_height=100.0, wall_distance=5.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
