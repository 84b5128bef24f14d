"""Virtual camera paths between two views."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from ..core import Camera, CameraPose, InvalidInputError, project_to_rotation


def interpolate_pose(a: CameraPose, b: CameraPose, t: float) -> CameraPose:
    """Pose at fraction ``t``: slerped orientation, linearly moved center."""
    return _interpolate(a, b, np.array([float(t)]))[0]


def _interpolate(a: CameraPose, b: CameraPose, ts: np.ndarray) -> list[CameraPose]:
    rots = Rotation.from_matrix(np.stack([a.rotation, b.rotation]))
    Rs = Slerp([0.0, 1.0], rots)(ts).as_matrix()
    ca, cb = a.center, b.center
    poses = []
    for t, R in zip(ts, Rs):
        R = project_to_rotation(R)
        c = (1.0 - t) * ca + t * cb
        poses.append(CameraPose(R, -R @ c))
    return poses


def interpolate_trajectory(cam_a: Camera, cam_b: Camera, n: int = 20) -> list[Camera]:
    """``n`` cameras from ``cam_a`` to ``cam_b`` inclusive.

    Intrinsics come from ``cam_a``. Endpoints are returned as given.
    """
    if n < 2:
        raise InvalidInputError("a trajectory needs at least two cameras")
    ts = np.linspace(0.0, 1.0, n)
    poses = _interpolate(cam_a.pose, cam_b.pose, ts[1:-1])
    middle = [cam_a.with_pose(p) for p in poses]
    return [cam_a, *middle, cam_b]
