import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from splatprior.core import Camera, CameraPose, DegenerateConfigurationError, InvalidInputError
from splatprior.core import SplatScene, rotation_angle
from splatprior.geomeval import (
    EmptyMeshError,
    Sim3,
    TriangleMesh,
    TSDFVolume,
    depth_metrics,
    extract_mesh,
    frustum_crop,
    interpolate_trajectory,
    mesh_metrics,
    reconstruct_mesh_pipeline,
    sample_surface,
    sim3_icp,
    tsdf_integrate,
)
from splatprior.scenes import analytic_mesh, default_intrinsics, make_camera_pair, make_two_plane_room
from splatprior.scenes import splats_from_analytic

from conftest import random_pose, random_rotation


def grid_plane(size=2.0, n=20, z=0.0):
    """Square in the z = ``z`` plane centred on the origin."""
    a = np.linspace(-size / 2, size / 2, n + 1)
    X, Y = np.meshgrid(a, a, indexing="ij")
    verts = np.stack([X, Y, np.full_like(X, z)], -1).reshape(-1, 3)
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    q00, q10, q01, q11 = idx[:-1, :-1], idx[1:, :-1], idx[:-1, 1:], idx[1:, 1:]
    tris = np.concatenate([np.stack([q00, q10, q11], -1).reshape(-1, 3), np.stack([q00, q11, q01], -1).reshape(-1, 3)])
    return TriangleMesh(verts, tris)


# --------------------------------------------------------------------------
# depth metrics


def test_depth_metric_examples(rng):
    gt = rng.uniform(1, 5, (8, 8))
    m = depth_metrics(gt, gt)
    assert (m.abs_rel, m.delta_110, m.delta_125, m.valid_count) == (0.0, 1.0, 1.0, 64)
    m = depth_metrics(1.2 * gt, gt)
    assert m.abs_rel == pytest.approx(0.2, abs=1e-12)
    assert (m.delta_110, m.delta_125) == (0.0, 1.0)
    assert depth_metrics(3.0 * gt, gt, align_scale=True).abs_rel == pytest.approx(0.0, abs=1e-12)


def test_depth_metrics_validity_mask():
    gt = np.array([[1.0, 0.0], [np.nan, 2.0]])
    pred = np.array([[1.1, 9.0], [9.0, 2.0]])
    m = depth_metrics(pred, gt)
    assert m.valid_count == 2
    assert m.abs_rel == pytest.approx(0.05, abs=1e-12)
    assert m.delta_110 == 0.5


def test_depth_metrics_errors():
    with pytest.raises(InvalidInputError):
        depth_metrics(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        depth_metrics(np.ones((2, 3)), np.ones((2, 2)))


@given(st.floats(1e-3, 1e3), st.integers(0, 100))
def test_aligned_metrics_ignore_global_scale(s, seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1, 5, (6, 6))
    pred = gt * rng.uniform(0.7, 1.4, gt.shape)
    a = depth_metrics(pred, gt, align_scale=True)
    b = depth_metrics(s * pred, gt, align_scale=True)
    assert b.abs_rel == pytest.approx(a.abs_rel, rel=1e-12)
    assert (b.delta_110, b.delta_125) == (a.delta_110, a.delta_125)
    assert a.delta_110 <= a.delta_125


# --------------------------------------------------------------------------
# trajectories


def test_two_view_trajectory_is_the_endpoints(rng):
    K = default_intrinsics(8, 8)
    a, b = Camera(K, random_pose(rng)), Camera(K, random_pose(rng))
    path = interpolate_trajectory(a, b, 2)
    assert path[0] is a and path[1] is b


def test_trajectory_between_equal_cameras(rng):
    cam = Camera(default_intrinsics(8, 8), random_pose(rng))
    for c in interpolate_trajectory(cam, cam, 5):
        np.testing.assert_allclose(c.pose.rotation, cam.pose.rotation, atol=1e-12)
        np.testing.assert_allclose(c.pose.translation, cam.pose.translation, atol=1e-12)


def test_trajectory_midpoint_halves_rotation():
    K = default_intrinsics(8, 8)
    R = Rotation.from_rotvec([0.0, np.pi / 2, 0.0]).as_matrix()
    a, b = Camera(K), Camera(K, CameraPose(R, [2.0, 0.0, 0.0]))
    mid = interpolate_trajectory(a, b, 3)[1]
    assert np.degrees(rotation_angle(mid.pose.rotation)) == pytest.approx(45.0, abs=1e-9)
    assert np.degrees(rotation_angle(mid.pose.rotation.T @ R)) == pytest.approx(45.0, abs=1e-9)
    np.testing.assert_allclose(mid.pose.center, 0.5 * b.pose.center, atol=1e-12)


def test_trajectory_needs_two_views():
    cam = Camera(default_intrinsics(8, 8))
    with pytest.raises(InvalidInputError):
        interpolate_trajectory(cam, cam, 1)


# --------------------------------------------------------------------------
# TSDF


def plane_volume(voxel=0.05):
    return TSDFVolume(np.array([-1.0, -1.0, 1.0]), voxel, (41, 41, 41))


def zero_crossings(vol):
    """Linear zero crossing along +z for every column with an observed sign change."""
    t, w = vol.tsdf, vol.weights
    out = []
    for i in range(vol.dims[0]):
        for j in range(vol.dims[1]):
            for k in range(vol.dims[2] - 1):
                if w[i, j, k] > 0 and w[i, j, k + 1] > 0 and t[i, j, k] > 0 >= t[i, j, k + 1]:
                    f = t[i, j, k] / (t[i, j, k] - t[i, j, k + 1])
                    out.append(vol.origin[2] + vol.voxel_size * (k + f))
    return np.array(out)


def test_empty_depth_leaves_volume_unchanged():
    vol = plane_volume()
    before = vol.copy()
    tsdf_integrate(vol, np.zeros((16, 16)), Camera(default_intrinsics(16, 16)))
    np.testing.assert_array_equal(vol.tsdf, before.tsdf)
    np.testing.assert_array_equal(vol.weights, before.weights)


def test_fronto_plane_zero_crossing():
    vol = plane_volume()
    cam = Camera(default_intrinsics(32, 32))
    tsdf_integrate(vol, np.full((32, 32), 2.0), cam)
    z = zero_crossings(vol)
    assert len(z) > 100
    assert np.abs(z - 2.0).max() < vol.voxel_size
    assert np.abs(vol.tsdf).max() <= 1.0


def test_consistent_views_double_weights():
    cam = Camera(default_intrinsics(32, 32))
    other = Camera(cam.intrinsics, CameraPose(np.eye(3), [0.1, 0.0, 0.0]))
    one = tsdf_integrate(plane_volume(), np.full((32, 32), 2.0), cam)
    two = tsdf_integrate(one.copy(), np.full((32, 32), 2.0), other)
    both = (one.weights > 0) & (two.weights == 2)
    assert both.sum() > 1000
    # identical observations of a plane leave the running average where it was
    overlap = both & (np.abs(one.tsdf) < 1)
    np.testing.assert_allclose(two.tsdf[overlap], one.tsdf[overlap], atol=1e-12)
    assert np.abs(zero_crossings(two) - 2.0).max() < two.voxel_size


def test_integration_order_invariance(rng):
    cams = [Camera(default_intrinsics(24, 24), random_pose(rng, 0.05, 0.1)) for _ in range(3)]
    depths = [rng.uniform(1.8, 2.2, (24, 24)) for _ in cams]
    a, b = plane_volume(), plane_volume()
    for i in (0, 1, 2):
        tsdf_integrate(a, depths[i], cams[i])
    for i in (2, 0, 1):
        tsdf_integrate(b, depths[i], cams[i])
    np.testing.assert_allclose(a.tsdf, b.tsdf, atol=1e-12)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_weight_cap():
    vol = plane_volume(0.1)
    cam = Camera(default_intrinsics(8, 8))
    for _ in range(130):
        tsdf_integrate(vol, np.full((8, 8), 2.0), cam)
    assert vol.weights.max() == 128.0


def test_extracted_plane_vertices_lie_on_plane():
    vol = plane_volume()
    tsdf_integrate(vol, np.full((32, 32), 2.0), Camera(default_intrinsics(32, 32)))
    mesh = extract_mesh(vol)
    assert np.abs(mesh.vertices[:, 2] - 2.0).max() < vol.voxel_size
    assert (mesh.areas() > 0).all()


def test_unobserved_or_positive_volume_has_no_mesh():
    with pytest.raises(EmptyMeshError):
        extract_mesh(plane_volume())
    vol = plane_volume()
    vol.weights[:] = 1.0
    with pytest.raises(EmptyMeshError):
        extract_mesh(vol)


def sphere_depth(cam, center, radius):
    """z-depth of the nearest ray hit on a sphere, 0 on misses."""
    rays = cam.intrinsics.rays()  # camera frame, z = 1
    c = cam.pose.rotation @ center + cam.pose.translation
    a = (rays * rays).sum(-1)
    b = -2 * rays @ c
    disc = b * b - 4 * a * (c @ c - radius**2)
    t = np.where(disc > 0, (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a), 0.0)
    return np.where(disc > 0, t, 0.0)


def test_fused_sphere_radius():
    center, radius, voxel = np.zeros(3), 0.5, 0.04
    cams = []
    for yaw in np.linspace(0, 2 * np.pi, 8, endpoint=False):
        for pitch in (-0.6, 0.0, 0.6):
            c2w = Rotation.from_euler("yx", [yaw, pitch]).as_matrix()
            pos = -2.0 * c2w[:, 2]
            R = c2w.T
            cams.append(Camera(default_intrinsics(48, 48), CameraPose(R, -R @ pos)))
    vol = TSDFVolume.from_bounds(center - radius, center + radius, voxel)
    for cam in cams:
        tsdf_integrate(vol, sphere_depth(cam, center, radius), cam)
    mesh = extract_mesh(vol)
    err = np.abs(np.linalg.norm(mesh.vertices - center, axis=1) - radius)
    assert err.mean() < 0.5 * voxel


# --------------------------------------------------------------------------
# frustum crop


def test_frustum_crop_cases():
    cam = Camera(default_intrinsics(32, 32))
    inside = grid_plane(0.5, 4, z=3.0)
    assert len(frustum_crop(inside, [cam])) == len(inside)
    behind = grid_plane(0.5, 4, z=-3.0)
    assert frustum_crop(behind, [cam]).is_empty
    # the frustum half-width at z = 3 is 1.5, so a 6 x 6 plane offset by 3 is half visible
    half = grid_plane(6.0, 30, z=3.0).transformed(1.0, np.eye(3), [3.0, 0.0, 0.0])
    n = len(frustum_crop(half, [cam]))
    assert 0 < n < len(half)


def test_frustum_crop_is_idempotent(rng):
    mesh = grid_plane(8.0, 20, z=3.0)
    cams = [Camera(default_intrinsics(16, 16), random_pose(rng, 0.2, 0.5)) for _ in range(2)]
    once = frustum_crop(mesh, cams)
    twice = frustum_crop(once, cams)
    np.testing.assert_array_equal(once.vertices, twice.vertices)
    np.testing.assert_array_equal(once.triangles, twice.triangles)


# --------------------------------------------------------------------------
# Sim(3)


def test_icp_identity(rng):
    pts = rng.normal(size=(300, 3))
    T = sim3_icp(pts, pts)
    assert T.scale == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(T.translation, 0.0, atol=1e-9)


def test_icp_recovers_similarity(rng):
    src = rng.normal(size=(500, 3)) * [1.0, 0.6, 0.3]
    src -= src.mean(axis=0)
    R = Rotation.from_rotvec([0.1, -0.15, 0.2]).as_matrix()
    t = np.array([0.3, -0.2, 0.5])
    T = sim3_icp(src, 2.0 * src @ R.T + t)
    assert T.scale == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(T.rotation, R, atol=1e-6)
    np.testing.assert_allclose(T.translation, t, atol=1e-6)


def test_icp_preconditions():
    with pytest.raises(InvalidInputError):
        sim3_icp(np.zeros((2, 3)), np.ones((5, 3)))
    line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        sim3_icp(line, line)


def test_sim3_algebra(rng):
    A = Sim3(1.5, random_rotation(rng), rng.normal(size=3))
    B = Sim3(0.7, random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(A.compose(B).apply(p), A.apply(B.apply(p)), atol=1e-12)
    np.testing.assert_allclose(A.inverse().apply(A.apply(p)), p, atol=1e-12)
    with pytest.raises(InvalidInputError):
        Sim3(0.0)


# --------------------------------------------------------------------------
# mesh metrics


def test_identical_meshes_are_close():
    mesh = grid_plane(2.0, 10)
    n = 20_000
    m = mesh_metrics(mesh, mesh, samples=n, seed=1)
    spacing = np.sqrt(mesh.areas().sum() / n)
    assert max(m.accuracy, m.completeness, m.chamfer) < 2 * spacing


@pytest.mark.parametrize("delta", [0.01, 0.05])
def test_plane_offset_gives_delta(delta):
    gt = grid_plane(20.0, 20)
    pred = gt.transformed(1.0, np.eye(3), [0.0, 0.0, delta])
    m = mesh_metrics(pred, gt, samples=100_000)
    for value in (m.accuracy, m.completeness, m.chamfer):
        assert value == pytest.approx(delta, rel=0.05)


def test_half_plane_coverage():
    gt = grid_plane(2.0, 20)
    half = gt.submesh(gt.vertices[gt.triangles].mean(axis=1)[:, 0] < 0)
    m = mesh_metrics(half, gt, samples=50_000)
    assert m.accuracy < 0.01
    # points uniform on x in [0, 1] are on average 0.5 from the kept half
    assert m.completeness == pytest.approx(0.25, rel=0.05)


def test_metrics_swap_symmetry():
    a = grid_plane(2.0, 10)
    b = grid_plane(1.5, 7, z=0.1)
    m, s = mesh_metrics(a, b, samples=5000), mesh_metrics(b, a, samples=5000)
    assert (m.accuracy, m.completeness) == (s.completeness, s.accuracy)
    assert m.chamfer == (m.accuracy + m.completeness) / 2


def test_metrics_reject_empty():
    with pytest.raises(InvalidInputError):
        mesh_metrics(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), grid_plane())


def test_sampling_is_area_weighted():
    mesh = grid_plane(2.0, 4)
    pts = sample_surface(mesh, 40_000, seed=3)
    assert np.abs(pts[:, 2]).max() == 0.0
    assert np.mean(pts[:, 0] < 0) == pytest.approx(0.5, abs=0.01)


def test_mesh_rejects_bad_indices():
    with pytest.raises(InvalidInputError):
        TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


# --------------------------------------------------------------------------
# pipeline


@pytest.fixture(scope="module")
def plane_pipeline_scene():
    sc = make_two_plane_room(0)
    c1, c2, _ = make_camera_pair(sc, intrinsics=default_intrinsics(32, 32))
    return sc, SplatScene([splats_from_analytic(sc, c1), splats_from_analytic(sc, c2)]), (c1, c2)


def test_zero_opacity_scene_has_no_mesh(plane_pipeline_scene):
    _, scene, cams = plane_pipeline_scene
    empty = SplatScene([f.__class__(f.intrinsics, f.means, f.quats, f.scales, np.zeros_like(f.opacities),
                                    f.colors, f.gt_pose) for f in scene.frames])
    with pytest.raises(EmptyMeshError):
        reconstruct_mesh_pipeline(empty, cams)


def test_more_views_complete_more(plane_pipeline_scene):
    sc, scene, cams = plane_pipeline_scene
    gt = frustum_crop(analytic_mesh(sc, 0.05), interpolate_trajectory(*cams, 20))
    voxel = sc.radius / 64
    comp = {n: mesh_metrics(reconstruct_mesh_pipeline(scene, cams, n, voxel), gt, 20_000).completeness
            for n in (2, 20)}
    assert comp[20] <= comp[2]
