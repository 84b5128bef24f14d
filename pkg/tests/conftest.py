import numpy as np
import pytest
from hypothesis import settings

from splatprior.core import Camera, CameraIntrinsics, CameraPose, so3_exp

# timing-based deadlines are flaky on a shared single core
settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng) -> np.ndarray:
    return so3_exp(rng.normal(size=3))


def random_pose(rng, rot_scale=0.3, trans_scale=0.5) -> CameraPose:
    return CameraPose(so3_exp(rot_scale * rng.normal(size=3)), trans_scale * rng.normal(size=3))


def simple_camera(width=16, height=16, f=None, pose=None) -> Camera:
    f = float(width) if f is None else f
    K = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    return Camera(K, pose or CameraPose())


def scattered_scene(seed: int, rows: int = 5, cols: int = 10, image: int = 64, mode=None):
    """``rows * cols`` random splats in front of a camera, plus a 64x64 view of them."""
    from splatprior.core import SplatFrame, SplatMode, SplatScene

    mode = mode or SplatMode.THREE_DGS
    rng = np.random.default_rng(seed)
    grid_K = CameraIntrinsics(cols, cols, cols / 2, rows / 2, cols, rows)
    depth = rng.uniform(2.0, 5.0, (rows, cols))
    means = grid_K.rays() * depth[..., None] + 0.1 * rng.standard_normal((rows, cols, 3))
    quats = rng.standard_normal((rows, cols, 4))
    scales = rng.uniform(0.05, 0.4, (rows, cols, 3))
    opac = rng.uniform(0.2, 0.95, (rows, cols))
    colors = rng.uniform(0.0, 1.0, (rows, cols, 3))
    scene = SplatScene([SplatFrame(grid_K, means, quats, scales, opac, colors, CameraPose())], mode)
    cam = simple_camera(image, image, f=0.9 * image, pose=random_pose(rng, 0.05, 0.1))
    return scene, cam
