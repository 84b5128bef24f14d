"""Similarity transforms and scaled point-to-point ICP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..core import DegenerateConfigurationError, InvalidInputError


@dataclass(frozen=True)
class Sim3:
    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if not self.scale > 0:
            raise InvalidInputError("Sim3 scale must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or np.linalg.det(R) < 0:
            raise InvalidInputError("Sim3 rotation must be a proper rotation")

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "Sim3") -> "Sim3":
        """``self`` after ``other``."""
        return Sim3(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Sim3":
        Rt = self.rotation.T
        return Sim3(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)


def _check_points(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if len(p) < 3:
        raise InvalidInputError(f"{name} needs at least 3 points")
    centered = p - p.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateConfigurationError(f"{name} points are collinear or coincident")
    return p


def umeyama(src, dst) -> Sim3:
    """Closed-form least-squares similarity mapping ``src[i]`` onto ``dst[i]``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs * xs).sum() / len(src)
    if var_s <= 0:
        raise DegenerateConfigurationError("source points coincide")
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(D) @ S) / var_s)
    if not scale > 0:
        raise DegenerateConfigurationError("similarity fit produced a non-positive scale")
    return Sim3(scale, R, mu_d - scale * R @ mu_s)


def sim3_icp(src, dst, iters: int = 50, init: Sim3 | None = None, tol: float = 1e-9) -> Sim3:
    """Scaled point-to-point ICP mapping ``src`` toward ``dst``.

    Without ``init`` the clouds are first matched by centroid and RMS radius,
    with no rotation. Stops when the RMS residual changes by less than ``tol``.
    """
    src = _check_points(src, "source")
    dst = _check_points(dst, "target")
    if init is None:
        ms, md = src.mean(axis=0), dst.mean(axis=0)
        rs = np.sqrt(((src - ms) ** 2).sum(axis=1).mean())
        rd = np.sqrt(((dst - md) ** 2).sum(axis=1).mean())
        s = rd / rs
        init = Sim3(s, np.eye(3), md - s * ms)
    tree = cKDTree(dst)
    T = init
    prev = np.inf
    for _ in range(iters):
        dist, nn = tree.query(T.apply(src))
        rms = float(np.sqrt(np.mean(dist * dist)))
        if abs(prev - rms) < tol:
            break
        prev = rms
        T = umeyama(src, dst[nn])
    return T
