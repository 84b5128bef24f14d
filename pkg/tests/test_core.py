import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatprior.core import (
    CameraIntrinsics,
    CameraPose,
    Gaussian3D,
    InvalidInputError,
    SplatFrame,
    SplatMode,
    SplatScene,
    build_covariance,
    gaussian_normal,
    normalize_quat,
    project_to_rotation,
    quat_to_rotation,
    rotation_angle,
    rotation_to_quat,
    so3_exp,
    so3_log,
)

from conftest import random_rotation, simple_camera

quats = st.lists(st.floats(-1.0, 1.0), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3)
scales3 = st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3)


def test_identity_quaternion():
    assert np.array_equal(quat_to_rotation([1.0, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_x_maps_y_to_z():
    h = np.sqrt(2) / 2
    R = quat_to_rotation([h, h, 0.0, 0.0])
    np.testing.assert_allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)


def test_unnormalized_quaternion_is_normalized():
    np.testing.assert_allclose(quat_to_rotation([2.0, 0, 0, 0]), np.eye(3), atol=1e-15)


def test_zero_quaternion_rejected():
    with pytest.raises(InvalidInputError):
        quat_to_rotation([0.0, 0, 0, 0])


@given(quats)
def test_rotation_is_orthonormal(q):
    R = quat_to_rotation(q)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9
    assert abs(np.linalg.norm(normalize_quat(q)) - 1.0) < 1e-9


@given(quats)
def test_quaternion_round_trip_up_to_sign(q):
    q = normalize_quat(q)
    back = rotation_to_quat(quat_to_rotation(q))
    assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9


def test_rotation_matches_scipy(rng):
    from scipy.spatial.transform import Rotation

    for _ in range(10):
        q = normalize_quat(rng.normal(size=4))
        ref = Rotation.from_quat(q[[1, 2, 3, 0]]).as_matrix()
        np.testing.assert_allclose(quat_to_rotation(q), ref, atol=1e-12)


def test_exp_log_round_trip(rng):
    for _ in range(10):
        w = rng.normal(size=3)
        w *= 2.5 / max(np.linalg.norm(w), 2.5)
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-10)
        assert abs(rotation_angle(so3_exp(w)) - np.linalg.norm(w)) < 1e-10


def test_project_to_rotation_recovers_noisy_rotation(rng):
    R = random_rotation(rng)
    np.testing.assert_allclose(project_to_rotation(3.0 * R), R, atol=1e-12)


def test_covariance_identity_rotation():
    g = Gaussian3D(np.zeros(3), [1, 0, 0, 0], [1, 2, 3], 1.0, np.zeros(3))
    np.testing.assert_allclose(build_covariance(g), np.diag([1.0, 2, 3]), atol=1e-15)


def test_covariance_swaps_axes_under_quarter_turn_about_z():
    h = np.sqrt(2) / 2
    g = Gaussian3D(np.zeros(3), [h, 0, 0, h], [2, 1, 3], 1.0, np.zeros(3))
    np.testing.assert_allclose(build_covariance(g), np.diag([1.0, 2, 3]), atol=1e-12)


@given(quats, scales3)
def test_covariance_eigenvalues_are_scales(q, s):
    g = Gaussian3D(np.zeros(3), q, s, 1.0, np.zeros(3))
    S = build_covariance(g)
    assert np.abs(S - S.T).max() < 1e-12
    ev = np.linalg.eigvalsh(S)
    assert ev.min() >= -1e-10
    np.testing.assert_allclose(ev, np.sort(s), atol=1e-10)


@given(quats, scales3)
def test_normal_is_min_eigenvector(q, s):
    g = Gaussian3D(np.zeros(3), q, s, 1.0, np.zeros(3))
    n = gaussian_normal(g)
    assert abs(np.linalg.norm(n) - 1) < 1e-12
    np.testing.assert_allclose(build_covariance(g) @ n, min(s) * n, atol=1e-9)


def test_covariance_rotation_equivariance(rng):
    for _ in range(10):
        q = normalize_quat(rng.normal(size=4))
        P = random_rotation(rng)
        s = rng.uniform(0, 2, 3)
        g = Gaussian3D(np.zeros(3), q, s, 1.0, np.zeros(3))
        pq = rotation_to_quat(P @ quat_to_rotation(q))
        gp = Gaussian3D(np.zeros(3), pq, s, 1.0, np.zeros(3))
        np.testing.assert_allclose(build_covariance(gp), P @ build_covariance(g) @ P.T, atol=1e-9)


def test_normal_examples():
    g = Gaussian3D(np.zeros(3), [1, 0, 0, 0], [2, 3, 1], 1.0, np.zeros(3))
    np.testing.assert_allclose(gaussian_normal(g), [0, 0, 1])
    h = np.sqrt(2) / 2
    g = Gaussian3D(np.zeros(3), [h, h, 0, 0], [1, 5, 5], 1.0, np.zeros(3))
    np.testing.assert_allclose(gaussian_normal(g), [1, 0, 0], atol=1e-15)
    g = Gaussian3D(np.zeros(3), [1, 0, 0, 0], [0.1, 0.2, 3], 1.0, np.zeros(3), SplatMode.TWO_DGS)
    np.testing.assert_allclose(gaussian_normal(g), [0, 0, 1])


def test_normal_ties_go_to_lowest_axis():
    g = Gaussian3D(np.zeros(3), [1, 0, 0, 0], [1, 1, 1], 1.0, np.zeros(3))
    np.testing.assert_allclose(gaussian_normal(g), [1, 0, 0])


def test_two_dgs_covariance_annihilates_normal(rng):
    for _ in range(10):
        g = Gaussian3D(np.zeros(3), rng.normal(size=4), rng.uniform(0.1, 2, 3), 1.0, np.zeros(3),
                       SplatMode.TWO_DGS)
        assert g.scales[2] == 0.0
        assert np.abs(build_covariance(g) @ gaussian_normal(g)).max() < 1e-10


def test_invariants_enforced():
    with pytest.raises(InvalidInputError):
        Gaussian3D(np.zeros(3), [1, 0, 0, 0], [-1, 1, 1], 1.0, np.zeros(3))
    assert Gaussian3D(np.zeros(3), [1, 0, 0, 0], [1, 1, 1], 1.7, np.zeros(3)).opacity == 1.0
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(0.0, 1.0, 1, 1, 8, 8)
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(1.0, 1.0, 1, 1, 2, 8)
    with pytest.raises(InvalidInputError):
        CameraPose(np.diag([1.0, 1.0, -1.0]))


def test_pose_algebra(rng):
    a = CameraPose(random_rotation(rng), rng.normal(size=3))
    b = CameraPose(random_rotation(rng), rng.normal(size=3))
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.compose(b).apply(x), a.apply(b.apply(x)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(x)), x, atol=1e-12)
    np.testing.assert_allclose(a.apply(a.center), 0.0, atol=1e-12)


def test_backproject_then_project_returns_pixel_centers(rng):
    cam = simple_camera(12, 10, pose=CameraPose(random_rotation(rng), rng.normal(size=3)))
    depth = rng.uniform(1, 3, (10, 12))
    uv, z = cam.project(cam.backproject(depth))
    u, v = cam.intrinsics.pixel_centers()
    np.testing.assert_allclose(uv[..., 0], u, atol=1e-10)
    np.testing.assert_allclose(uv[..., 1], v, atol=1e-10)
    np.testing.assert_allclose(z, depth, atol=1e-12)


def test_frame_shape_checked():
    K = CameraIntrinsics(4, 4, 2, 2, 4, 3)
    ok = dict(means=np.zeros((3, 4, 3)), quats=np.tile([1.0, 0, 0, 0], (3, 4, 1)), scales=np.ones((3, 4, 3)),
              opacities=np.ones((3, 4)), colors=np.zeros((3, 4, 3)))
    SplatFrame(K, **ok)
    with pytest.raises(InvalidInputError):
        SplatFrame(K, **{**ok, "means": np.zeros((4, 3, 3))})


def test_two_dgs_scene_zeroes_third_scale():
    K = CameraIntrinsics(4, 4, 2, 2, 3, 3)
    f = SplatFrame(K, np.zeros((3, 3, 3)), np.tile([1.0, 0, 0, 0], (3, 3, 1)), np.ones((3, 3, 3)),
                   np.ones((3, 3)), np.zeros((3, 3, 3)))
    scene = SplatScene([f], SplatMode.TWO_DGS)
    assert np.all(scene.frames[0].scales[..., 2] == 0)
    assert scene.flat()["means"].shape == (9, 3)
