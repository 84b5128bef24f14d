"""Virtual-trajectory depth fusion of a splat scene into a mesh."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..core import Camera, SplatScene
from ..raster import RenderConfig, render_views
from .mesh import TriangleMesh
from .trajectory import interpolate_trajectory
from .tsdf import EmptyMeshError, TSDFVolume, extract_mesh, tsdf_integrate


def reconstruct_mesh_pipeline(
    scene: SplatScene,
    cams: Sequence[Camera],
    n_views: int = 20,
    voxel_size: Optional[float] = None,
    trunc_voxels: float = 4.0,
    depth: str = "expected",
    render_cfg: RenderConfig = RenderConfig(),
) -> TriangleMesh:
    """Render depth along the path between two cameras, fuse it, and mesh it.

    ``voxel_size`` defaults to the scene radius over 128. The volume is
    bounded by the back-projected rendered depth.
    """
    cam_a, cam_b = cams
    if voxel_size is None:
        voxel_size = scene.radius() / 128.0
    path = interpolate_trajectory(cam_a, cam_b, n_views)
    buffers = render_views(scene, path, render_cfg)
    depths = [np.nan_to_num(b.depth(depth), nan=0.0) for b in buffers]
    pts = [cam.backproject(d)[d > 0] for cam, d in zip(path, depths)]
    pts = [p for p in pts if len(p)]
    if not pts or not voxel_size > 0:
        raise EmptyMeshError("no rendered depth to fuse")
    allp = np.concatenate(pts)
    vol = TSDFVolume.from_bounds(allp.min(axis=0), allp.max(axis=0), voxel_size, trunc_voxels)
    for cam, d in zip(path, depths):
        tsdf_integrate(vol, d, cam)
    return extract_mesh(vol)
