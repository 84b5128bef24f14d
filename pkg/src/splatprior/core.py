"""Splat and camera types, quaternion algebra, covariances and Gaussian normals.

Quaternions are stored as ``(w, x, y, z)`` arrays. Cameras use the
world-to-camera convention ``x_cam = R @ x_world + T`` and pixel centers sit at
``(column + 0.5, row + 0.5)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class DegenerateConfigurationError(InvalidInputError):
    """Raised when a geometric problem has no unique solution."""


class NumericalError(RuntimeError):
    """Raised when an optimization produces non-finite values."""


class SplatMode(str, enum.Enum):
    THREE_DGS = "3dgs"
    TWO_DGS = "2dgs"


# --------------------------------------------------------------------------
# quaternions and rotations


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise InvalidInputError("zero-norm quaternion")
    return q / n


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a (possibly unnormalized) quaternion ``(w, x, y, z)``.

    Works on a single quaternion or any leading batch shape.
    """
    w, x, y, z = np.moveaxis(normalize_quat(q), -1, 0)
    R = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return R.reshape(R.shape[:-1] + (3, 3))


def rotation_to_quat(R) -> np.ndarray:
    """Inverse of :func:`quat_to_rotation`, returning ``w >= 0``."""
    from scipy.spatial.transform import Rotation

    R = np.asarray(R, dtype=np.float64)
    xyzw = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_quat()
    q = xyzw[:, [3, 0, 1, 2]]
    q *= np.where(q[:, :1] < 0, -1.0, 1.0)
    return q.reshape(R.shape[:-2] + (4,))


def hat(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    K = hat(omega)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + np.sin(theta) / theta * K
        + (1.0 - np.cos(theta)) / theta**2 * K @ K
    )


def so3_log(R) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_rotvec()


def project_to_rotation(M) -> np.ndarray:
    """Closest rotation matrix (Frobenius norm) to ``M``."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_angle(R) -> float:
    """Rotation angle in radians, robust near 0 and pi."""
    R = np.asarray(R, dtype=np.float64)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


# --------------------------------------------------------------------------
# Gaussians


@dataclass(frozen=True)
class Gaussian3D:
    mean: np.ndarray
    rotation: np.ndarray  # quaternion (w, x, y, z)
    scales: np.ndarray
    opacity: float
    color: np.ndarray
    mode: SplatMode = SplatMode.THREE_DGS

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float64).copy()
        if np.any(scales < 0):
            raise InvalidInputError("scales must be nonnegative")
        if self.mode == SplatMode.TWO_DGS:
            scales[2] = 0.0
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "opacity", float(np.clip(self.opacity, 0.0, 1.0)))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))


def build_covariance(g: Gaussian3D) -> np.ndarray:
    """``R(q) diag(s) R(q)^T`` with the scales placed linearly on the diagonal.

    Renderers square the scales instead; see ``RenderConfig.square_scales``.
    """
    R = quat_to_rotation(g.rotation)
    S = R @ np.diag(g.scales) @ R.T
    return 0.5 * (S + S.T)


def normal_axis(scales, mode: SplatMode = SplatMode.THREE_DGS) -> np.ndarray:
    """Index of the rotation column that holds the Gaussian normal.

    Ties go to the lowest axis index (``argmin`` semantics).
    """
    scales = np.asarray(scales)
    if mode == SplatMode.TWO_DGS:
        return np.full(scales.shape[:-1], 2, dtype=np.int64)
    return np.argmin(scales, axis=-1)


def gaussian_normal(g: Gaussian3D) -> np.ndarray:
    R = quat_to_rotation(g.rotation)
    return R[:, int(normal_axis(g.scales, g.mode))]


# --------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if self.width < 3 or self.height < 3:
            raise InvalidInputError("image must be at least 3x3 pixels")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(u, v) pixel-center coordinate grids of shape (H, W)."""
        u = np.arange(self.width, dtype=np.float64) + 0.5
        v = np.arange(self.height, dtype=np.float64) + 0.5
        return np.meshgrid(u, v)

    def rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z, shape (H, W, 3)."""
        u, v = self.pixel_centers()
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)], axis=-1)


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise InvalidInputError("pose rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def apply(self, points) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """``self ∘ other``: apply ``other`` first."""
        return CameraPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose = field(default_factory=CameraPose)

    def with_pose(self, pose: CameraPose) -> "Camera":
        return replace(self, pose=pose)

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and camera-z of world points."""
        pc = self.pose.apply(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.intrinsics.fx * pc[..., 0] / z + self.intrinsics.cx
            v = self.intrinsics.fy * pc[..., 1] / z + self.intrinsics.cy
        return np.stack([u, v], axis=-1), z

    def backproject(self, depth) -> np.ndarray:
        """World points of a z-depth map, shape (H, W, 3)."""
        pc = self.intrinsics.rays() * np.asarray(depth, dtype=np.float64)[..., None]
        return (pc - self.pose.translation) @ self.pose.rotation


# --------------------------------------------------------------------------
# scenes


@dataclass
class SplatFrame:
    """An H x W grid of pixel-aligned Gaussians, means in frame-0 coordinates."""

    intrinsics: CameraIntrinsics
    means: np.ndarray  # (H, W, 3)
    quats: np.ndarray  # (H, W, 4)
    scales: np.ndarray  # (H, W, 3)
    opacities: np.ndarray  # (H, W)
    colors: np.ndarray  # (H, W, 3)
    gt_pose: Optional[CameraPose] = None

    def __post_init__(self):
        H, W = self.intrinsics.height, self.intrinsics.width
        self.means = np.asarray(self.means, dtype=np.float64)
        self.quats = np.asarray(self.quats, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.opacities = np.clip(np.asarray(self.opacities, dtype=np.float64), 0.0, 1.0)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        expected = {"means": 3, "quats": 4, "scales": 3, "colors": 3}
        for name, c in expected.items():
            if getattr(self, name).shape != (H, W, c):
                raise InvalidInputError(f"{name} must have shape {(H, W, c)}")
        if self.opacities.shape != (H, W):
            raise InvalidInputError(f"opacities must have shape {(H, W)}")
        if np.any(self.scales < 0):
            raise InvalidInputError("scales must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    def gaussian(self, u: int, v: int, mode: SplatMode = SplatMode.THREE_DGS) -> Gaussian3D:
        """Splat aligned with pixel column ``u``, row ``v``."""
        return Gaussian3D(
            self.means[v, u], self.quats[v, u], self.scales[v, u],
            self.opacities[v, u], self.colors[v, u], mode,
        )

    def copy(self) -> "SplatFrame":
        return SplatFrame(
            self.intrinsics, self.means.copy(), self.quats.copy(), self.scales.copy(),
            self.opacities.copy(), self.colors.copy(), self.gt_pose,
        )


@dataclass
class SplatScene:
    frames: list[SplatFrame]
    mode: SplatMode = SplatMode.THREE_DGS

    def __post_init__(self):
        self.mode = SplatMode(self.mode)
        if self.mode == SplatMode.TWO_DGS:
            for f in self.frames:
                f.scales = f.scales.copy()
                f.scales[..., 2] = 0.0

    def __len__(self) -> int:
        return len(self.frames)

    def flat(self) -> dict[str, np.ndarray]:
        """All Gaussians concatenated in frame, row, column order."""
        return {
            "means": np.concatenate([f.means.reshape(-1, 3) for f in self.frames]),
            "quats": np.concatenate([f.quats.reshape(-1, 4) for f in self.frames]),
            "scales": np.concatenate([f.scales.reshape(-1, 3) for f in self.frames]),
            "opacities": np.concatenate([f.opacities.reshape(-1) for f in self.frames]),
            "colors": np.concatenate([f.colors.reshape(-1, 3) for f in self.frames]),
        }

    def radius(self) -> float:
        """Half the diagonal of the bounding box of visible means."""
        flat = self.flat()
        pts = flat["means"][flat["opacities"] > 0]
        if len(pts) == 0:
            pts = flat["means"]
        return float(0.5 * np.linalg.norm(pts.max(0) - pts.min(0)))

    def copy(self) -> "SplatScene":
        return SplatScene([f.copy() for f in self.frames], self.mode)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for f in self.frames:
            for a in (f.means, f.quats, f.scales, f.opacities, f.colors):
                h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()
