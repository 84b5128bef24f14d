"""Truncated signed distance fusion and marching-cubes extraction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.measure import marching_cubes

from ..core import Camera, InvalidInputError
from .mesh import TriangleMesh, largest_component, remove_degenerate

WEIGHT_CAP = 128.0


class EmptyMeshError(InvalidInputError):
    """Raised when a volume contains no observed zero crossing."""


@dataclass
class TSDFVolume:
    """Dense voxel grid; voxel ``(i, j, k)`` sits at ``origin + voxel_size * (i, j, k)``.

    Unobserved voxels hold ``tsdf = 1`` and ``weight = 0``.
    """

    origin: np.ndarray
    voxel_size: float
    dims: tuple
    trunc_voxels: float = 4.0
    tsdf: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.dims = tuple(int(d) for d in self.dims)
        if self.voxel_size <= 0 or min(self.dims) < 2:
            raise InvalidInputError("voxel_size must be positive and every dim at least 2")
        if self.tsdf is None:
            self.tsdf = np.ones(self.dims)
        if self.weights is None:
            self.weights = np.zeros(self.dims)

    @classmethod
    def from_bounds(cls, lo, hi, voxel_size: float, trunc_voxels: float = 4.0) -> "TSDFVolume":
        """Volume covering ``[lo, hi]`` padded by one truncation band."""
        pad = (trunc_voxels + 1) * voxel_size
        lo = np.asarray(lo, dtype=np.float64) - pad
        hi = np.asarray(hi, dtype=np.float64) + pad
        dims = np.maximum(np.ceil((hi - lo) / voxel_size).astype(int) + 1, 2)
        return cls(lo, voxel_size, tuple(dims), trunc_voxels)

    @property
    def truncation(self) -> float:
        return self.trunc_voxels * self.voxel_size

    def copy(self) -> "TSDFVolume":
        return TSDFVolume(self.origin.copy(), self.voxel_size, self.dims, self.trunc_voxels,
                          self.tsdf.copy(), self.weights.copy())

    def points(self) -> np.ndarray:
        axes = [self.origin[i] + self.voxel_size * np.arange(self.dims[i]) for i in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _sample_depth(depth: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous pixel coordinates (pixel centers at +0.5).

    Uses the four surrounding samples when all are valid, else the nearest
    valid sample, else 0.
    """
    H, W = depth.shape
    x, y = u - 0.5, v - 0.5
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    fx, fy = x - x0, y - y0
    xs = [np.clip(x0, 0, W - 1), np.clip(x0 + 1, 0, W - 1)]
    ys = [np.clip(y0, 0, H - 1), np.clip(y0 + 1, 0, H - 1)]
    d00, d10 = depth[ys[0], xs[0]], depth[ys[0], xs[1]]
    d01, d11 = depth[ys[1], xs[0]], depth[ys[1], xs[1]]
    bilinear = (1 - fx) * (1 - fy) * d00 + fx * (1 - fy) * d10 + (1 - fx) * fy * d01 + fx * fy * d11
    all_valid = (d00 > 0) & (d10 > 0) & (d01 > 0) & (d11 > 0)
    nearest = depth[np.clip(np.floor(v).astype(int), 0, H - 1), np.clip(np.floor(u).astype(int), 0, W - 1)]
    return np.where(all_valid, bilinear, nearest)


def tsdf_integrate(vol: TSDFVolume, depth, cam: Camera) -> TSDFVolume:
    """Fuse one z-depth map in place (and return the volume).

    Signed distance is the depth difference along the viewing ray, positive in
    front of the surface; only voxels with ``|sdf| <= truncation`` are updated.
    """
    depth = np.nan_to_num(np.asarray(depth, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0)
    K = cam.intrinsics
    if depth.shape != (K.height, K.width):
        raise InvalidInputError("depth map does not match camera size")
    if not (depth > 0).any():
        return vol
    pts = vol.points().reshape(-1, 3)
    uv, z = cam.project(pts)
    u, v = uv[:, 0], uv[:, 1]
    inside = (z > 0) & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    idx = np.flatnonzero(inside)
    d = _sample_depth(depth, u[idx], v[idx])
    sdf = d - z[idx]
    keep = (d > 0) & (np.abs(sdf) <= vol.truncation)
    idx, sdf = idx[keep], sdf[keep]
    obs = sdf / vol.truncation
    tsdf, w = vol.tsdf.reshape(-1), vol.weights.reshape(-1)
    w_old = w[idx]
    tsdf[idx] = (w_old * tsdf[idx] + obs) / (w_old + 1.0)
    w[idx] = np.minimum(w_old + 1.0, WEIGHT_CAP)
    return vol


def extract_mesh(vol: TSDFVolume, keep_largest: bool = True) -> TriangleMesh:
    """Marching cubes over cells whose eight corners are all observed."""
    obs = vol.weights > 0
    cells = (
        obs[:-1, :-1, :-1] & obs[1:, :-1, :-1] & obs[:-1, 1:, :-1] & obs[:-1, :-1, 1:]
        & obs[1:, 1:, :-1] & obs[1:, :-1, 1:] & obs[:-1, 1:, 1:] & obs[1:, 1:, 1:]
    )
    # marching_cubes keys a cell's mask on its far corner
    mask = np.zeros(vol.dims, dtype=bool)
    mask[1:, 1:, 1:] = cells
    vals = vol.tsdf[obs]
    if not cells.any() or vals.min() > 0 or vals.max() < 0:
        raise EmptyMeshError("volume has no observed zero crossing")
    try:
        verts, faces, _, _ = marching_cubes(vol.tsdf, level=0.0, spacing=(vol.voxel_size,) * 3, mask=mask)
    except (ValueError, RuntimeError) as exc:
        raise EmptyMeshError(str(exc)) from exc
    mesh = remove_degenerate(TriangleMesh(verts + vol.origin, faces))
    if keep_largest:
        mesh = largest_component(mesh)
    if mesh.is_empty:
        raise EmptyMeshError("marching cubes produced no faces")
    return mesh
