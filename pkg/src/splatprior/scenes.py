"""Synthetic planar scenes with exact depth, normal, color and mesh oracles.

World coordinates coincide with the first camera's frame, so the first
camera of every rig has the identity pose.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    InvalidInputError,
    SplatFrame,
    SplatMode,
    SplatScene,
    rotation_to_quat,
    so3_exp,
)
from .geomeval.mesh import TriangleMesh


@dataclass(frozen=True)
class Texture:
    """Soft checkerboard plus smooth value noise, defined in plane coordinates."""

    base: tuple = (0.5, 0.5, 0.5)
    checker_size: float = 0.6
    checker_amp: float = 0.12
    noise_cell: float = 0.35
    noise_amp: float = 0.12
    seed: int = 0

    def _lattice(self, na: int, nb: int) -> np.ndarray:
        return np.random.default_rng(self.seed).random((na, nb, 3))

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        checker = np.tanh(3.0 * np.sin(np.pi * a / self.checker_size) * np.sin(np.pi * b / self.checker_size))
        ga, gb = a / self.noise_cell, b / self.noise_cell
        lattice = self._lattice(64, 64)
        i = np.clip(np.floor(ga).astype(int), 0, 62)
        j = np.clip(np.floor(gb).astype(int), 0, 62)
        fa, fb = ga - i, gb - j
        sa = (fa * fa * (3 - 2 * fa))[..., None]
        sb = (fb * fb * (3 - 2 * fb))[..., None]
        noise = (
            (1 - sa) * (1 - sb) * lattice[i, j] + sa * (1 - sb) * lattice[i + 1, j]
            + (1 - sa) * sb * lattice[i, j + 1] + sa * sb * lattice[i + 1, j + 1]
        )
        color = np.asarray(self.base) + self.checker_amp * checker[..., None] + self.noise_amp * (noise - 0.5)
        return np.clip(color, 0.0, 1.0)


@dataclass(frozen=True)
class Plane:
    """Parallelogram ``origin + a edge_u + b edge_v`` for ``a, b`` in [0, 1].

    ``normal`` is the unit plane normal, oriented by ``edge_u x edge_v``.
    """

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        for name in ("origin", "edge_u", "edge_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) == 0:
            raise InvalidInputError("plane edges must not be collinear")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    @property
    def offset(self) -> float:
        return float(self.normal @ self.origin)

    def local(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Parallelogram coordinates ``(a, b)`` of in-plane points."""
        M = np.stack([self.edge_u, self.edge_v], axis=1)  # (3, 2)
        ab = (points - self.origin) @ np.linalg.pinv(M).T
        return ab[..., 0], ab[..., 1]


@dataclass(frozen=True)
class AnalyticScene:
    planes: tuple
    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))


def make_two_plane_room(seed: int = 0) -> AnalyticScene:
    """Floor plus back wall meeting at a right angle, textured per ``seed``."""
    rng = np.random.default_rng(seed)
    s1, s2 = (int(x) for x in rng.integers(0, 2**31 - 1, size=2))
    floor = Plane(
        origin=[-2.8, 1.2, 1.0], edge_u=[0.0, 0.0, 4.0], edge_v=[5.6, 0.0, 0.0],
        texture=Texture(base=(0.55, 0.45, 0.35), seed=s1),
    )
    wall = Plane(
        origin=[-2.8, -2.8, 5.0], edge_u=[0.0, 4.0, 0.0], edge_v=[5.6, 0.0, 0.0],
        texture=Texture(base=(0.35, 0.5, 0.6), seed=s2),
    )
    return AnalyticScene(planes=(floor, wall), radius=4.0, center=np.array([0.0, -0.8, 3.0]))


def default_intrinsics(width: int = 32, height: int = 32) -> CameraIntrinsics:
    """Pinhole camera with a 53 degree horizontal field of view."""
    f = float(width)
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)


@dataclass
class AnalyticRender:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W) camera z, 0 where missed
    normal: np.ndarray  # (H, W, 3) world normals facing the camera
    plane_id: np.ndarray  # (H, W) int, -1 where missed

    @property
    def hit(self) -> np.ndarray:
        return self.plane_id >= 0

    def interior(self) -> np.ndarray:
        """Hit pixels whose 3x3 neighborhood lies on a single plane."""
        pid = self.plane_id
        out = np.zeros(pid.shape, dtype=bool)
        c = pid[1:-1, 1:-1]
        ok = c >= 0
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ok &= pid[1 + dy:pid.shape[0] - 1 + dy, 1 + dx:pid.shape[1] - 1 + dx] == c
        out[1:-1, 1:-1] = ok
        return out


def _intersect(scene: AnalyticScene, cam: Camera, rays_cam: np.ndarray):
    R = cam.pose.rotation
    C = cam.pose.center
    d = rays_cam @ R  # world directions with unit camera z
    best_t = np.full(d.shape[:-1], np.inf)
    best_id = np.full(d.shape[:-1], -1)
    for k, pl in enumerate(scene.planes):
        n = pl.normal
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (pl.offset - n @ C) / denom
        pts = C + t[..., None] * d
        a, b = pl.local(pts)
        tol = 1e-12
        ok = (np.abs(denom) > 1e-15) & (t > 0) & (a >= -tol) & (a <= 1 + tol) & (b >= -tol) & (b <= 1 + tol)
        closer = ok & (t < best_t)
        best_t = np.where(closer, t, best_t)
        best_id = np.where(closer, k, best_id)
    return best_t, best_id, d


def analytic_render(scene: AnalyticScene, cam: Camera) -> AnalyticRender:
    """Ray-cast z-depth, normals and texture color at every pixel center."""
    K = cam.intrinsics
    t, pid, d = _intersect(scene, cam, K.rays())
    H, W = K.height, K.width
    color = np.zeros((H, W, 3))
    normal = np.zeros((H, W, 3))
    depth = np.where(pid >= 0, t, 0.0)
    pts = cam.pose.center + depth[..., None] * d
    for k, pl in enumerate(scene.planes):
        m = pid == k
        if not m.any():
            continue
        a, b = pl.local(pts[m])
        color[m] = pl.texture(a * np.linalg.norm(pl.edge_u), b * np.linalg.norm(pl.edge_v))
        n = pl.normal
        flip = np.where((d[m] @ n) > 0, -1.0, 1.0)
        normal[m] = flip[:, None] * n
    return AnalyticRender(color, depth, normal, pid)


def splats_from_analytic(scene: AnalyticScene, cam: Camera, mode: SplatMode = SplatMode.THREE_DGS,
                         footprint_scale: float = 0.3, thickness: float = 0.1) -> SplatFrame:
    """Ground-truth pixel-aligned splats for one view.

    Means are exact back-projections; the third rotation axis is the plane
    normal facing the camera; in-plane scales are ``footprint_scale`` times the
    pixel footprint on the surface. Missed pixels get zero opacity at the
    farthest hit depth.
    """
    ar = analytic_render(scene, cam)
    if not ar.hit.any():
        raise InvalidInputError("camera sees no surface")
    K = cam.intrinsics
    depth = np.where(ar.hit, ar.depth, ar.depth[ar.hit].max())
    means = cam.backproject(depth)

    # surface points one pixel to the right and below, for the footprint
    u, v = K.pixel_centers()
    du = np.stack([(u + 1 - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], -1)
    dv = np.stack([(u - K.cx) / K.fx, (v + 1 - K.cy) / K.fy, np.ones_like(u)], -1)
    normals = np.where(ar.hit[..., None], ar.normal, -cam.pose.rotation[2][None, None])
    center = cam.pose.center
    dirs_u = du @ cam.pose.rotation
    dirs_v = dv @ cam.pose.rotation
    # intersect neighbor rays with each pixel's tangent plane
    off = np.einsum("hwc,hwc->hw", normals, means - center)
    Pu = center + (off / np.einsum("hwc,hwc->hw", normals, dirs_u))[..., None] * dirs_u
    Pv = center + (off / np.einsum("hwc,hwc->hw", normals, dirs_v))[..., None] * dirs_v
    tu = Pu - means
    tv = Pv - means
    e1 = tu / np.linalg.norm(tu, axis=-1, keepdims=True)
    e2 = np.cross(normals, e1)
    rot = np.stack([e1, e2, normals], axis=-1)
    quats = rotation_to_quat(rot)
    s1 = np.linalg.norm(tu, axis=-1)
    s2 = np.abs(np.einsum("hwc,hwc->hw", tv, e2))
    s1, s2 = footprint_scale * s1, footprint_scale * s2
    s3 = thickness * np.minimum(s1, s2) if mode == SplatMode.THREE_DGS else np.zeros_like(s1)
    scales = np.stack([s1, s2, s3], axis=-1)
    opac = ar.hit.astype(np.float64)
    return SplatFrame(K, means, quats, scales, opac, ar.color.copy(), cam.pose)


def _look_rotation(yaw: float, pitch: float) -> np.ndarray:
    """Camera-to-world rotation for a yaw about +y then pitch about +x."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    return Ry @ Rx


def make_camera_pair(
    scene: AnalyticScene,
    baseline_frac: float = 0.25,
    rot_deg: float = 10.0,
    seed: int = 0,
    intrinsics: Optional[CameraIntrinsics] = None,
) -> tuple[Camera, Camera, CameraPose]:
    """Reference camera at the origin plus a second camera.

    The second camera sits ``baseline_frac * radius`` away, sideways, and is
    yawed by ``rot_deg`` toward the scene center. Returns both cameras and
    the exact pose of the second relative to the first.
    """
    if not 0.0 <= baseline_frac < 1.0:
        raise InvalidInputError("baseline_frac must lie in [0, 1)")
    K = intrinsics or default_intrinsics()
    rng = np.random.default_rng(seed)
    side = 1.0 if rng.random() < 0.5 else -1.0
    lift = rng.uniform(-0.2, 0.2)
    direction = np.array([side, lift, 0.0])
    direction /= np.linalg.norm(direction)
    center2 = baseline_frac * scene.radius * direction
    c2w = _look_rotation(-side * np.deg2rad(rot_deg), 0.0)
    R2 = c2w.T
    pose2 = CameraPose(R2, -R2 @ center2)
    cam1, cam2 = Camera(K), Camera(K, pose2)
    for cam in (cam1, cam2):
        uv, z = cam.project(scene.center[None])
        if not (z[0] > 0 and 0 <= uv[0, 0] <= K.width and 0 <= uv[0, 1] <= K.height):
            raise InvalidInputError("scene center falls outside a camera frustum")
    return cam1, cam2, pose2


def virtual_camera(cam_a: Camera, cam_b: Camera, t: float = 0.5) -> Camera:
    """Camera interpolated between two rig cameras (slerp + linear centers)."""
    from .geomeval.trajectory import interpolate_pose

    return cam_a.with_pose(interpolate_pose(cam_a.pose, cam_b.pose, t))


def analytic_mesh(scene: AnalyticScene, spacing: float = 0.05) -> TriangleMesh:
    """Tessellate every plane into a regular triangle grid."""
    verts, tris = [], []
    base = 0
    for pl in scene.planes:
        nu = max(1, int(np.ceil(np.linalg.norm(pl.edge_u) / spacing)))
        nv = max(1, int(np.ceil(np.linalg.norm(pl.edge_v) / spacing)))
        a, b = np.meshgrid(np.linspace(0, 1, nu + 1), np.linspace(0, 1, nv + 1), indexing="ij")
        pts = pl.origin + a[..., None] * pl.edge_u + b[..., None] * pl.edge_v
        verts.append(pts.reshape(-1, 3))
        idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1) + base
        q00, q10, q01, q11 = idx[:-1, :-1], idx[1:, :-1], idx[:-1, 1:], idx[1:, 1:]
        tris.append(np.stack([q00, q10, q11], -1).reshape(-1, 3))
        tris.append(np.stack([q00, q11, q01], -1).reshape(-1, 3))
        base += (nu + 1) * (nv + 1)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def random_splat_scene(
    grid: int = 4,
    seed: int = 0,
    mode: SplatMode = SplatMode.THREE_DGS,
    frames: int = 1,
    image_size: int = 16,
    planar: bool = False,
) -> tuple[SplatScene, list[Camera]]:
    """Small random scene of ``frames`` grids of ``grid x grid`` splats plus a render camera per frame.

    Means lie in front of an identity camera. With ``planar`` they sit on a
    tilted plane with mild jitter, which keeps grid normals well defined.
    """
    rng = np.random.default_rng(seed)
    K = CameraIntrinsics(image_size * 0.9, image_size * 0.9, image_size / 2, image_size / 2, image_size, image_size)
    grid_K = CameraIntrinsics(grid * 0.9, grid * 0.9, grid / 2, grid / 2, grid, grid)
    out = []
    for _ in range(frames):
        u, v = grid_K.pixel_centers()
        rays = grid_K.rays()
        if planar:
            a, b = rng.uniform(-0.3, 0.3, 2)
            depth = 3.0 + a * (u - grid / 2) / grid * 3 + b * (v - grid / 2) / grid * 3
            depth = depth * (1 + 0.02 * rng.standard_normal(depth.shape))
        else:
            depth = rng.uniform(2.0, 4.0, (grid, grid))
        means = rays * depth[..., None] + 0.05 * rng.standard_normal((grid, grid, 3))
        quats = rng.standard_normal((grid, grid, 4))
        quats /= np.linalg.norm(quats, axis=-1, keepdims=True)
        scales = rng.uniform(0.15, 0.5, (grid, grid, 3))
        if mode == SplatMode.TWO_DGS:
            scales[..., 2] = 0.0
        opac = rng.uniform(0.3, 0.9, (grid, grid))
        colors = rng.uniform(0.05, 0.95, (grid, grid, 3))
        out.append(SplatFrame(grid_K, means, quats, scales, opac, colors, CameraPose()))
    cams = [Camera(K, CameraPose(so3_exp(0.03 * rng.standard_normal(3)), 0.05 * rng.standard_normal(3)))
            for _ in range(frames)]
    return SplatScene(out, mode), cams


def frame_from_depth(cam: Camera, depth: np.ndarray, colors: np.ndarray, mode: SplatMode = SplatMode.THREE_DGS,
                     footprint_scale: float = 0.5, thickness: float = 0.1, opacity: float = 0.9) -> SplatFrame:
    """Pixel-aligned splats back-projected from a depth map, facing the camera.

    In-plane scales match the pixel footprint at each depth, the normal axis
    points back toward the camera center.
    """
    K = cam.intrinsics
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (K.height, K.width) or not (depth > 0).all():
        raise InvalidInputError("depth must be positive and match the camera size")
    means = cam.backproject(depth)
    Rc = cam.pose.rotation  # rows are camera axes in world coordinates
    rot = np.stack([Rc[0], -Rc[1], -Rc[2]], axis=1)  # columns: x, -y, -z (toward camera)
    quat = rotation_to_quat(rot)
    quats = np.broadcast_to(quat, depth.shape + (4,)).copy()
    s = footprint_scale * depth / np.sqrt(K.fx * K.fy)
    s3 = thickness * s if mode == SplatMode.THREE_DGS else np.zeros_like(s)
    scales = np.stack([s, s, s3], axis=-1)
    opac = np.full(depth.shape, float(opacity))
    return SplatFrame(K, means, quats, scales, opac, np.clip(colors, 0, 1).copy(), cam.pose)


def random_depth_init(scene: AnalyticScene, cams, seed: int = 0, scale_range: tuple = (0.8, 1.25),
                      smooth: float = 0.0, corr_px: float = 8.0, noise: float = 0.0,
                      mode: SplatMode = SplatMode.THREE_DGS, **kw) -> SplatScene:
    """Splat scene whose depths are randomly distorted true depths.

    Each frame's true depth map is multiplied by a random global factor drawn
    log-uniformly from ``scale_range``, a smooth random field of log-amplitude
    ``smooth`` (correlation length ``corr_px`` pixels) and i.i.d. log-normal
    noise of level ``noise``. Colors come from the analytic render.
    """
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    frames = []
    for cam in cams:
        ar = analytic_render(scene, cam)
        depth = np.where(ar.hit, ar.depth, ar.depth[ar.hit].max() if ar.hit.any() else 1.0)
        log_scale = rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]))
        field = gaussian_filter(rng.standard_normal(depth.shape), corr_px, mode="reflect")
        field /= max(field.std(), 1e-12)
        depth = depth * np.exp(log_scale + smooth * field + noise * rng.standard_normal(depth.shape))
        frames.append(frame_from_depth(cam, depth, ar.color, mode, **kw))
    return SplatScene(frames, mode)
