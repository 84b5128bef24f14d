import numpy as np
import pytest

from splatprior.core import Camera, CameraPose, SplatMode, SplatScene, gaussian_normal, quat_to_rotation
from splatprior.pose import pose_errors
from splatprior.priors import alignment_loss, normal_from_means, orientation_loss
from splatprior.raster import render_views
from splatprior.scenes import (
    AnalyticScene,
    Plane,
    Texture,
    analytic_mesh,
    analytic_render,
    default_intrinsics,
    make_camera_pair,
    make_two_plane_room,
    random_depth_init,
    splats_from_analytic,
)

from conftest import simple_camera


def test_two_plane_room_is_orthogonal():
    for seed in range(4):
        sc = make_two_plane_room(seed)
        assert len(sc.planes) == 2
        cos = sc.planes[0].normal @ sc.planes[1].normal
        assert np.degrees(np.arccos(cos)) == pytest.approx(90.0, abs=1e-12)
        assert sc.radius == 4.0


def test_textures_are_seeded():
    a, b, c = make_two_plane_room(3), make_two_plane_room(3), make_two_plane_room(4)
    pts = np.linspace(0, 3, 50)
    ta = a.planes[0].texture(pts, pts[::-1])
    np.testing.assert_array_equal(ta, b.planes[0].texture(pts, pts[::-1]))
    assert not np.array_equal(ta, c.planes[0].texture(pts, pts[::-1]))


def fronto(z=2.0):
    return AnalyticScene((Plane([-5.0, -5.0, z], [10.0, 0, 0], [0, 10.0, 0], Texture()),), 5.0)


def test_fronto_plane_depth():
    ar = analytic_render(fronto(2.0), simple_camera(16, 16))
    assert ar.hit.all()
    np.testing.assert_allclose(ar.depth, 2.0, atol=1e-15)
    np.testing.assert_allclose(ar.normal, np.broadcast_to([0, 0, -1.0], ar.normal.shape))


def test_tilted_plane_depth_closed_form():
    # plane z = 3 + x (45 degrees about y): along the ray (x', y', 1) * z, z = 3 / (1 - x')
    sc = AnalyticScene((Plane([-1.0, -4.0, 2.0], [3.0, 0.0, 3.0], [0.0, 8.0, 0.0], Texture()),), 5.0)
    cam = simple_camera(24, 24)
    ar = analytic_render(sc, cam)
    xr = cam.intrinsics.rays()[..., 0]
    expect = 3.0 / (1.0 - xr)
    m = ar.hit
    assert m.sum() > 100
    np.testing.assert_allclose(ar.depth[m], expect[m], rtol=0, atol=1e-12)


def test_floor_normal_is_constant():
    sc = make_two_plane_room(0)
    ar = analytic_render(sc, Camera(default_intrinsics(32, 32)))
    floor = ar.plane_id == 0
    assert floor.sum() > 50
    np.testing.assert_allclose(ar.normal[floor], np.broadcast_to(ar.normal[floor][0], ar.normal[floor].shape))


def test_misses_are_marked():
    sc = fronto()
    cam = Camera(default_intrinsics(8, 8), CameraPose(np.diag([1.0, -1.0, -1.0]), [0, 0, 0]))
    ar = analytic_render(sc, cam)
    assert not ar.hit.any() and (ar.depth == 0).all()


def test_depth_and_normals_agree_with_grid_normals():
    sc = make_two_plane_room(1)
    for cam in make_camera_pair(sc, intrinsics=default_intrinsics(32, 32))[:2]:
        ar = analytic_render(sc, cam)
        grid = cam.backproject(ar.depth)
        worst = 0.0
        for v, u in zip(*np.nonzero(ar.interior())):
            n = normal_from_means(grid, u, v)
            worst = max(worst, np.degrees(np.arccos(np.clip(abs(n @ ar.normal[v, u]), 0, 1))))
        assert worst < 0.1


# --------------------------------------------------------------------------
# ground-truth splats


@pytest.fixture(scope="module")
def gt_scene():
    sc = make_two_plane_room(0)
    c1, c2, _ = make_camera_pair(sc, intrinsics=default_intrinsics(32, 32))
    return sc, (c1, c2), SplatScene([splats_from_analytic(sc, c1), splats_from_analytic(sc, c2)])


def test_gt_splats_zero_the_priors(gt_scene):
    sc, cams, scene = gt_scene
    assert alignment_loss(scene, list(cams)) < 1e-18
    region = np.stack([analytic_render(sc, c).interior() for c in cams])
    assert orientation_loss(scene, region=region) < 1e-6


def test_gt_splat_normals_match_planes(gt_scene):
    sc, cams, scene = gt_scene
    for frame, cam in zip(scene.frames, cams):
        ar = analytic_render(sc, cam)
        for v, u in zip(*np.nonzero(ar.hit)):
            n = gaussian_normal(frame.gaussian(u, v))
            assert abs(n @ ar.normal[v, u]) == pytest.approx(1.0, abs=1e-9)


def test_gt_splats_satisfy_core_invariants(gt_scene):
    _, _, scene = gt_scene
    for f in scene.frames:
        assert np.abs(np.linalg.norm(f.quats, axis=-1) - 1).max() < 1e-9
        R = quat_to_rotation(f.quats[3, 4])
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert (f.scales >= 0).all() and ((f.opacities >= 0) & (f.opacities <= 1)).all()
        assert ((f.colors >= 0) & (f.colors <= 1)).all()


def test_gt_render_psnr():
    sc = make_two_plane_room(0)
    cam = Camera(default_intrinsics(64, 64))
    img = render_views(SplatScene([splats_from_analytic(sc, cam)]), [cam])[0].color
    mse = np.mean((img - analytic_render(sc, cam).color) ** 2)
    assert 10 * np.log10(1.0 / mse) > 30.0


def test_two_dgs_mode_zeroes_thickness():
    sc = make_two_plane_room(0)
    f = splats_from_analytic(sc, Camera(default_intrinsics(16, 16)), mode=SplatMode.TWO_DGS)
    assert (f.scales[..., 2] == 0).all()


# --------------------------------------------------------------------------
# camera rigs


def test_zero_baseline_pair_is_identical():
    sc = make_two_plane_room(0)
    c1, c2, rel = make_camera_pair(sc, 0.0, 0.0)
    np.testing.assert_allclose(rel.rotation, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(rel.translation, 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_pair_rotation_and_visibility(seed):
    sc = make_two_plane_room(seed)
    c1, c2, rel = make_camera_pair(sc, 0.25, 10.0, seed)
    assert pose_errors(rel, c1.pose).rot_deg == pytest.approx(10.0, abs=1e-9)
    for cam in (c1, c2):
        uv, z = cam.project(sc.center[None])
        assert z[0] > 0 and 0 <= uv[0, 0] <= cam.intrinsics.width and 0 <= uv[0, 1] <= cam.intrinsics.height
    assert np.linalg.norm(c2.pose.center - c1.pose.center) == pytest.approx(1.0, abs=1e-12)


def test_pair_rejects_bad_baseline():
    from splatprior.core import InvalidInputError

    with pytest.raises(InvalidInputError):
        make_camera_pair(make_two_plane_room(0), 1.5)


def test_analytic_mesh_covers_planes():
    sc = make_two_plane_room(0)
    mesh = analytic_mesh(sc, 0.1)
    expect = sum(np.linalg.norm(np.cross(p.edge_u, p.edge_v)) for p in sc.planes)
    assert mesh.areas().sum() == pytest.approx(expect, rel=1e-12)


def test_random_depth_init_scales_true_depth():
    sc = make_two_plane_room(2)
    cams = make_camera_pair(sc, intrinsics=default_intrinsics(16, 16))[:2]
    init = random_depth_init(sc, cams, seed=5)
    for frame, cam in zip(init.frames, cams):
        ar = analytic_render(sc, cam)
        z = frame.means @ cam.pose.rotation[2] + cam.pose.translation[2]
        ratio = z[ar.hit] / ar.depth[ar.hit]
        assert np.ptp(ratio) < 1e-12
        assert 0.8 <= ratio[0] <= 1.25
    again = random_depth_init(sc, cams, seed=5)
    assert again.checksum() == init.checksum()
