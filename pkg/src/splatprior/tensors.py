"""Differentiable (torch, float64) views of scenes and cameras."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import torch

from .core import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    InvalidInputError,
    SplatFrame,
    SplatMode,
    SplatScene,
    normal_axis,
)

DTYPE = torch.float64


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE).clone()
    return t.requires_grad_(requires_grad)


def quat_to_rotation_t(q: torch.Tensor) -> torch.Tensor:
    """Batched rotation matrices of (unnormalized) quaternions ``(..., 4)``."""
    q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    R = torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def so3_exp_t(omega: torch.Tensor) -> torch.Tensor:
    """Rodrigues' formula, differentiable at zero."""
    theta2 = (omega * omega).sum()
    small = theta2 < 1e-12
    safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(safe)
    A = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    B = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe)
    zero = torch.zeros((), dtype=omega.dtype)
    K = torch.stack(
        [
            torch.stack([zero, -omega[2], omega[1]]),
            torch.stack([omega[2], zero, -omega[0]]),
            torch.stack([-omega[1], omega[0], zero]),
        ]
    )
    return torch.eye(3, dtype=omega.dtype) + A * K + B * (K @ K)


def retract_pose(pose: CameraPose, xi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Left-perturbed world-to-camera pose for tangent ``xi = (omega, rho)``."""
    R0 = as_tensor(pose.rotation)
    T0 = as_tensor(pose.translation)
    dR = so3_exp_t(xi[:3])
    return dR @ R0, dR @ T0 + xi[3:]


def pose_tensors(cam: Camera) -> tuple[torch.Tensor, torch.Tensor]:
    return as_tensor(cam.pose.rotation), as_tensor(cam.pose.translation)


@dataclass
class SceneTensors:
    """Stacked per-frame splat parameters, each of shape ``(T, H, W, ...)``."""

    means: torch.Tensor
    quats: torch.Tensor
    scales: torch.Tensor
    opacities: torch.Tensor
    colors: torch.Tensor
    intrinsics: list[CameraIntrinsics]
    mode: SplatMode = SplatMode.THREE_DGS
    sigma_min: float = 0.0

    @classmethod
    def from_scene(cls, scene: SplatScene, requires_grad: bool = False,
                   sigma_min: Optional[float] = None) -> "SceneTensors":
        shapes = {f.shape for f in scene.frames}
        if len(shapes) != 1:
            raise InvalidInputError("all frames must share one grid size")
        if sigma_min is None:
            sigma_min = 1e-4 * scene.radius()
        stack = lambda name: as_tensor(np.stack([getattr(f, name) for f in scene.frames]), requires_grad)
        return cls(
            stack("means"), stack("quats"), stack("scales"), stack("opacities"), stack("colors"),
            [f.intrinsics for f in scene.frames], scene.mode, float(sigma_min),
        )

    def to_scene(self, template: Optional[SplatScene] = None) -> SplatScene:
        get = lambda t: t.detach().cpu().numpy().copy()
        frames = []
        for i, intr in enumerate(self.intrinsics):
            gt = template.frames[i].gt_pose if template is not None else None
            frames.append(
                SplatFrame(
                    intr, get(self.means[i]), get(self.quats[i]), get(self.scales[i]),
                    get(self.opacities[i]), get(self.colors[i]), gt,
                )
            )
        return SplatScene(frames, self.mode)

    @property
    def num_frames(self) -> int:
        return self.means.shape[0]

    def flat(self) -> dict[str, torch.Tensor]:
        return {
            "means": self.means.reshape(-1, 3),
            "quats": self.quats.reshape(-1, 4),
            "scales": self.scales.reshape(-1, 3),
            "opacities": self.opacities.reshape(-1),
            "colors": self.colors.reshape(-1, 3),
        }

    def params(self) -> dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)[:5]}

    def normals(self) -> torch.Tensor:
        """Gaussian normals (T, H, W, 3): rotation column at the smallest scale."""
        R = quat_to_rotation_t(self.quats)
        axis = torch.as_tensor(normal_axis(self.scales.detach().numpy(), self.mode))
        idx = axis[..., None, None].expand(R.shape[:-2] + (3, 1))
        return torch.gather(R, -1, idx)[..., 0]
