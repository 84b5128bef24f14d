"""Camera pose from 2D-3D correspondences, and pose-accuracy metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    CameraIntrinsics,
    CameraPose,
    DegenerateConfigurationError,
    InvalidInputError,
    SplatScene,
    project_to_rotation,
    rotation_angle,
    so3_exp,
)

MIN_CORRESPONDENCES = 6


class EstimationFailedError(RuntimeError):
    """No pose hypothesis gathered enough inliers."""


@dataclass(frozen=True)
class Correspondence2D3D:
    pixel: tuple
    point: tuple

    def __post_init__(self):
        if not (np.all(np.isfinite(self.pixel)) and np.all(np.isfinite(self.point))):
            raise InvalidInputError("correspondence entries must be finite")


def _as_arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of correspondences or a ``(pixels, points)`` array pair."""
    if isinstance(corrs, tuple) and len(corrs) == 2 and not isinstance(corrs[0], Correspondence2D3D):
        px, pts = corrs
    else:
        px = [c.pixel for c in corrs]
        pts = [c.point for c in corrs]
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if len(px) != len(pts):
        raise InvalidInputError("pixel and point counts differ")
    if not (np.isfinite(px).all() and np.isfinite(pts).all()):
        raise InvalidInputError("correspondences must be finite")
    return px, pts


def reprojection_residuals(pose: CameraPose, K: CameraIntrinsics, px: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pc = pts @ pose.rotation.T + pose.translation
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * pc[:, 0] / pc[:, 2] + K.cx
        v = K.fy * pc[:, 1] / pc[:, 2] + K.cy
    return np.stack([u, v], axis=1) - px


def dlt_pose(px: np.ndarray, pts: np.ndarray, K: CameraIntrinsics) -> CameraPose:
    """Linear pose from at least six correspondences, projected onto SE(3)."""
    if len(px) < MIN_CORRESPONDENCES:
        raise InvalidInputError(f"need at least {MIN_CORRESPONDENCES} correspondences")
    x = (px[:, 0] - K.cx) / K.fx
    y = (px[:, 1] - K.cy) / K.fy
    # normalize the 3D points for conditioning
    mu = pts.mean(axis=0)
    sc = np.sqrt(((pts - mu) ** 2).sum(axis=1).mean())
    if sc <= 0:
        raise DegenerateConfigurationError("all 3D points coincide")
    Xn = (pts - mu) / sc
    Xh = np.hstack([Xn, np.ones((len(pts), 1))])
    A = np.zeros((2 * len(pts), 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -x[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -y[:, None] * Xh
    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] <= 1e-10 * sv[0]:
        raise DegenerateConfigurationError("correspondences do not determine a projection (coplanar or collinear)")
    P = Vt[-1].reshape(3, 4)
    # P acts on normalized points; rewrite it as lam * [R | T] on raw points
    M = P[:, :3] / sc
    b = P[:, 3] - M @ mu
    # M = lam * R with lam > 0, so det(M) fixes the sign of the SVD solution
    lam = np.linalg.svd(M, compute_uv=False).mean() * np.sign(np.linalg.det(M))
    if lam == 0:
        raise DegenerateConfigurationError("singular linear pose estimate")
    return CameraPose(project_to_rotation(M / lam), b / lam)


def _gauss_newton(pose: CameraPose, K: CameraIntrinsics, px: np.ndarray, pts: np.ndarray,
                  max_iters: int = 100, step_tol: float = 1e-10) -> CameraPose:
    """Levenberg-Marquardt on the left-perturbed rigid tangent."""
    R, T = pose.rotation, pose.translation
    lam = 1e-3

    def cost_of(R, T):
        r = reprojection_residuals(CameraPose(R, T), K, px, pts)
        return float(np.sum(r * r)) if np.isfinite(r).all() else np.inf

    cost = cost_of(R, T)
    for it in range(max_iters):
        pc = pts @ R.T + T
        X, Y, Z = pc[:, 0], pc[:, 1], pc[:, 2]
        r = np.stack([K.fx * X / Z + K.cx, K.fy * Y / Z + K.cy], axis=1) - px
        dpi = np.zeros((len(pts), 2, 3))
        dpi[:, 0, 0] = K.fx / Z
        dpi[:, 0, 2] = -K.fx * X / Z**2
        dpi[:, 1, 1] = K.fy / Z
        dpi[:, 1, 2] = -K.fy * Y / Z**2
        # d pc / d omega = -[pc]x,  d pc / d rho = I
        skew = np.zeros((len(pts), 3, 3))
        skew[:, 0, 1], skew[:, 0, 2] = Z, -Y
        skew[:, 1, 0], skew[:, 1, 2] = -Z, X
        skew[:, 2, 0], skew[:, 2, 1] = Y, -X
        J = np.concatenate([dpi @ skew, dpi], axis=2).reshape(-1, 6)
        r = r.reshape(-1)
        JtJ = J.T @ J
        g = J.T @ r
        if it == 0:
            # only the starting configuration is judged; later iterates may pass
            # arbitrarily close to a point and are handled by the damping
            ev = np.linalg.eigvalsh(JtJ)
            if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
                raise DegenerateConfigurationError("rank-deficient normal equations")
        damp = np.diag(JtJ) + 1e-12 * np.max(np.diag(JtJ))
        while True:
            step = -np.linalg.solve(JtJ + lam * np.diag(damp), g)
            dR = so3_exp(step[:3])
            R_new, T_new = project_to_rotation(dR @ R), dR @ T + step[3:]
            new_cost = cost_of(R_new, T_new)
            if new_cost <= cost:
                R, T, cost = R_new, T_new, new_cost
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e12:
                return CameraPose(R, T)
        if np.linalg.norm(step) < step_tol:
            break
    return CameraPose(R, T)


def pnp_least_squares(corrs, K: CameraIntrinsics, init: Optional[CameraPose] = None,
                      max_iters: int = 100) -> CameraPose:
    """Pose minimizing the summed squared reprojection error."""
    px, pts = _as_arrays(corrs)
    if len(px) < MIN_CORRESPONDENCES:
        raise InvalidInputError(f"need at least {MIN_CORRESPONDENCES} correspondences, got {len(px)}")
    if init is None:
        init = dlt_pose(px, pts, K)
    return _gauss_newton(init, K, px, pts, max_iters=max_iters)


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 1.0
    max_iters: int = 2048
    confidence: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if not self.threshold_px > 0 or self.max_iters < 1 or not 0 < self.confidence < 1:
            raise InvalidInputError("invalid RANSAC configuration")


def pnp_ransac(corrs, K: CameraIntrinsics, cfg: RansacConfig = RansacConfig()) -> tuple[CameraPose, np.ndarray]:
    """Robust pose from minimal six-point samples, refit on the best inlier set."""
    px, pts = _as_arrays(corrs)
    n = len(px)
    if n < MIN_CORRESPONDENCES:
        raise InvalidInputError(f"need at least {MIN_CORRESPONDENCES} correspondences, got {n}")
    rng = np.random.default_rng(cfg.seed)
    thr2 = cfg.threshold_px**2
    best_mask, best_count, best_pose = None, 0, None
    needed = cfg.max_iters
    it = 0
    while it < min(needed, cfg.max_iters):
        it += 1
        idx = rng.choice(n, MIN_CORRESPONDENCES, replace=False)
        try:
            pose = pnp_least_squares((px[idx], pts[idx]), K, max_iters=10)
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        r = reprojection_residuals(pose, K, px, pts)
        z = pts @ pose.rotation[2] + pose.translation[2]
        with np.errstate(invalid="ignore"):
            mask = (np.sum(r * r, axis=1) < thr2) & (z > 0)
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count, best_pose = mask, count, pose
            frac = count / n
            if frac >= 1.0:
                needed = 0
            else:
                needed = int(np.ceil(np.log(1 - cfg.confidence) / np.log(1 - frac**MIN_CORRESPONDENCES)))
    if best_count < MIN_CORRESPONDENCES:
        raise EstimationFailedError("no hypothesis reached six inliers")
    pose = pnp_least_squares((px[best_mask], pts[best_mask]), K, init=best_pose)
    r = reprojection_residuals(pose, K, px, pts)
    with np.errstate(invalid="ignore"):
        mask = np.sum(r * r, axis=1) < thr2
    return pose, mask


def scene_correspondences(scene: SplatScene, frame_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel centers of a frame and the means of its splats (opacity > 0)."""
    frame = scene.frames[frame_index]
    u, v = frame.intrinsics.pixel_centers()
    keep = (frame.opacities > 0) & np.isfinite(frame.means).all(axis=-1)
    return np.stack([u[keep], v[keep]], axis=1), frame.means[keep]


def relative_pose_from_scene(scene: SplatScene, frame_index: int, method: str = "ls",
                             ransac: RansacConfig = RansacConfig()) -> CameraPose:
    """World-to-camera pose of frame ``frame_index`` relative to frame 0.

    Frames are indexed from 0; frame 0 defines the world and returns the
    identity.
    """
    if not 0 <= frame_index < len(scene.frames):
        raise InvalidInputError(f"frame index {frame_index} out of range")
    if frame_index == 0:
        return CameraPose.identity()
    px, pts = scene_correspondences(scene, frame_index)
    K = scene.frames[frame_index].intrinsics
    if method == "ls":
        return pnp_least_squares((px, pts), K)
    if method == "ransac":
        return pnp_ransac((px, pts), K, ransac)[0]
    raise InvalidInputError(f"unknown PnP method {method!r}")


@dataclass(frozen=True)
class PoseError:
    rot_deg: float
    trans_deg: float

    @property
    def max_deg(self) -> float:
        return max(self.rot_deg, self.trans_deg)


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)))


def pose_errors(pred: CameraPose, gt: CameraPose, min_baseline: float = 1e-9) -> PoseError:
    """Rotation angle between the poses and angle between translation directions.

    The translation angle is 0 when the ground-truth baseline is below
    ``min_baseline`` and 180 when only the prediction has no baseline.
    """
    rot = float(np.degrees(rotation_angle(pred.rotation.T @ gt.rotation)))
    tg, tp = gt.translation, pred.translation
    if np.linalg.norm(tg) < min_baseline:
        trans = 0.0
    elif np.linalg.norm(tp) < min_baseline:
        trans = 180.0
    else:
        trans = _angle_deg(tp / np.linalg.norm(tp), tg / np.linalg.norm(tg))
    return PoseError(rot, trans)


@dataclass(frozen=True)
class AUCResult:
    thresholds: tuple
    auc: tuple

    def as_dict(self) -> dict:
        return {f"auc@{t:g}": a for t, a in zip(self.thresholds, self.auc)}


def pose_auc(errors: Sequence[PoseError], thresholds: Sequence[float] = (5.0, 10.0, 20.0)) -> AUCResult:
    """Area under the recall-vs-error curve up to each threshold, normalized to [0, 1].

    Each pair's error is the larger of its rotation and translation angles.
    """
    if len(errors) == 0:
        raise InvalidInputError("no pose errors given")
    e = np.sort([err.max_deg for err in errors])
    auc = tuple(float(np.clip((t - e) / t, 0.0, 1.0).sum() / len(e)) for t in thresholds)
    return AUCResult(tuple(float(t) for t in thresholds), auc)
