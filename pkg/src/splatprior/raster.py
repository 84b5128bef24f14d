"""Projection and depth-sorted alpha compositing of Gaussians.

Color, accumulated depth, expected depth and normals share the compositing
weights ``w_k = T_k a_k G_k``. The hot loop lives in a compiled extension
when available (``BACKEND == "cython"``) and in NumPy otherwise; set
``SPLATPRIOR_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from . import _raster_py
from .core import Camera, Gaussian3D, InvalidInputError, SplatMode, SplatScene, normal_axis, quat_to_rotation
from .tensors import SceneTensors, pose_tensors, quat_to_rotation_t

try:
    if os.environ.get("SPLATPRIOR_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _raster_ext as _kernel

    BACKEND = "cython"
except ImportError:
    _kernel = _raster_py
    BACKEND = "python"

CUTOFF_3SIGMA = math.exp(-4.5)
FOOTPRINT_FLOOR = 1e-12


def set_backend(name: str) -> None:
    """Switch between ``"cython"`` and ``"python"`` compositing kernels."""
    global _kernel, BACKEND
    if name == "python":
        _kernel, BACKEND = _raster_py, "python"
    elif name == "cython":
        from . import _raster_ext

        _kernel, BACKEND = _raster_ext, "cython"
    else:
        raise InvalidInputError(f"unknown backend {name!r}")


class ContractViolation(AssertionError):
    pass


@dataclass(frozen=True)
class RenderConfig:
    square_scales: bool = True
    lowpass: float = 0.3
    z_near: float = 1e-4
    footprint_cutoff: float = CUTOFF_3SIGMA
    weight_eps: float = 1e-4
    depth: str = "expected"  # or "accumulated"
    num_threads: int = 1

    def __post_init__(self):
        if self.depth not in ("expected", "accumulated"):
            raise InvalidInputError("depth must be 'expected' or 'accumulated'")
        if not (0.0 < self.footprint_cutoff < 1.0):
            raise InvalidInputError("footprint_cutoff must lie in (0, 1)")


@dataclass
class RenderBuffers:
    """Per-view images. ``depth_exp`` and ``normal`` are NaN where undefined."""

    color: np.ndarray
    depth_acc: np.ndarray
    depth_exp: np.ndarray
    normal: np.ndarray
    weight_sum: np.ndarray
    weight_eps: float = 1e-4

    @property
    def valid(self) -> np.ndarray:
        return self.weight_sum > self.weight_eps

    def depth(self, kind: str = "expected") -> np.ndarray:
        return self.depth_exp if kind == "expected" else self.depth_acc


@dataclass(frozen=True)
class ScreenGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray
    normal_cam: np.ndarray


# --------------------------------------------------------------------------
# single-splat reference path (NumPy)


def _effective_variances(scales, mode, square_scales, sigma_min):
    s = np.array(scales, dtype=np.float64)
    if mode == SplatMode.TWO_DGS:
        s[..., 2] = np.maximum(s[..., 2], sigma_min)
    return s * s if square_scales else s


def _screen_space(g: Gaussian3D, cam: Camera, cfg: RenderConfig, sigma_min: float) -> Optional[ScreenGaussian]:
    R, T = cam.pose.rotation, cam.pose.translation
    x, y, z = R @ g.mean + T
    if z <= cfg.z_near:
        return None
    K = cam.intrinsics
    Rq = quat_to_rotation(g.rotation)
    Sigma = Rq @ np.diag(_effective_variances(g.scales, g.mode, cfg.square_scales, sigma_min)) @ Rq.T
    J = np.array([[K.fx / z, 0.0, -K.fx * x / z**2], [0.0, K.fy / z, -K.fy * y / z**2]])
    cov2d = J @ R @ Sigma @ R.T @ J.T + cfg.lowpass * np.eye(2)
    mean2d = np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])
    n = R @ Rq[:, int(normal_axis(g.scales, g.mode))]
    return ScreenGaussian(mean2d, cov2d, float(z), g.opacity, g.color, n)


def project_gaussian(g: Gaussian3D, cam: Camera, cfg: RenderConfig = RenderConfig(),
                     sigma_min: float = 0.0) -> Optional[ScreenGaussian]:
    """EWA projection of one Gaussian; ``None`` when behind the near plane or
    when its footprint above ``cfg.footprint_cutoff`` misses the image."""
    sg = _screen_space(g, cam, cfg, sigma_min)
    if sg is None:
        return None
    K = cam.intrinsics
    m = math.sqrt(2.0 * math.log(1.0 / cfg.footprint_cutoff))
    ex, ey = m * np.sqrt(np.diag(sg.cov2d))
    mx, my = sg.mean2d
    if mx + ex < 0 or mx - ex > K.width or my + ey < 0 or my - ey > K.height:
        return None
    return sg


def composite_pixel(splats: Sequence[tuple]) -> dict:
    """Front-to-back compositing of ``(footprint, opacity, color, depth, normal)``.

    The input must already be sorted by ascending depth.
    """
    if __debug__:
        depths = [s[3] for s in splats]
        if any(b < a for a, b in zip(depths, depths[1:])):
            raise ContractViolation("splats must be sorted by ascending depth")
    T = 1.0
    color = np.zeros(3)
    d_acc = 0.0
    n_acc = np.zeros(3)
    for G, opacity, c, d, n in splats:
        a = opacity * G
        w = T * a
        color += w * np.asarray(c)
        d_acc += w * d
        n_acc += w * np.asarray(n)
        T *= 1.0 - a
    wsum = 1.0 - T
    d_exp = d_acc / wsum if wsum > 0 else float("nan")
    nn = np.linalg.norm(n_acc)
    normal = n_acc / nn if nn > 0 else np.full(3, np.nan)
    return {"color": color, "depth_acc": d_acc, "depth_exp": d_exp, "normal": normal, "weight_sum": wsum}


# --------------------------------------------------------------------------
# differentiable renderer


class _Composite(torch.autograd.Function):
    @staticmethod
    def forward(ctx, mean2d, conic, opacity, feats, extent, order, H, W, cutoff, num_threads):
        arrays = [np.ascontiguousarray(t.detach().numpy()) for t in (mean2d, conic, opacity, feats)]
        args = arrays + [extent, order, H, W, cutoff]
        out, wsum = _kernel.composite_forward(*args, num_threads)
        ctx.args = args
        return torch.from_numpy(np.asarray(out)), torch.from_numpy(np.asarray(wsum))

    @staticmethod
    def backward(ctx, grad_out, grad_wsum):
        go = np.ascontiguousarray(grad_out.numpy(), dtype=np.float64)
        gw = np.ascontiguousarray(grad_wsum.numpy(), dtype=np.float64)
        grads = _kernel.composite_backward(*ctx.args, go, gw)
        return tuple(torch.from_numpy(np.asarray(g)) for g in grads) + (None,) * 6


def render_tensors(
    means: torch.Tensor,
    quats: torch.Tensor,
    scales: torch.Tensor,
    opacities: torch.Tensor,
    colors: torch.Tensor,
    R: torch.Tensor,
    T: torch.Tensor,
    intrinsics,
    cfg: RenderConfig = RenderConfig(),
    mode: SplatMode = SplatMode.THREE_DGS,
    sigma_min: float = 0.0,
) -> dict[str, torch.Tensor]:
    """Render flat (N, ...) splat tensors into one view; all outputs differentiable."""
    H, W = intrinsics.height, intrinsics.width
    fx, fy, cx, cy = intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy
    pc = means @ R.T + T
    keep = np.flatnonzero(pc[:, 2].detach().numpy() > cfg.z_near)
    idx = torch.from_numpy(keep)
    pc = pc[idx]
    x, y, z = pc.unbind(-1)

    Rq = quat_to_rotation_t(quats[idx])
    s = scales[idx]
    if mode == SplatMode.TWO_DGS:
        s = torch.cat([s[:, :2], torch.clamp(s[:, 2:], min=sigma_min)], dim=1)
    var = s * s if cfg.square_scales else s
    Sigma = (Rq * var[:, None, :]) @ Rq.transpose(1, 2)
    Sigma_cam = R @ Sigma @ R.T
    zero = torch.zeros_like(z)
    J = torch.stack(
        [
            torch.stack([fx / z, zero, -fx * x / z**2], dim=-1),
            torch.stack([zero, fy / z, -fy * y / z**2], dim=-1),
        ],
        dim=1,
    )
    cov = J @ Sigma_cam @ J.transpose(1, 2)
    ca = cov[:, 0, 0] + cfg.lowpass
    cb = cov[:, 0, 1]
    cc = cov[:, 1, 1] + cfg.lowpass
    det = ca * cc - cb * cb
    conic = torch.stack([cc / det, -cb / det, ca / det], dim=-1)
    mean2d = torch.stack([fx * x / z + cx, fy * y / z + cy], dim=-1)

    m = math.sqrt(2.0 * math.log(1.0 / cfg.footprint_cutoff))
    var2 = torch.stack([ca, cc], dim=-1).detach().numpy()
    extent = np.ascontiguousarray(m * np.sqrt(var2) * (1.0 + 1e-9) + 1e-9)

    axis = torch.as_tensor(normal_axis(s.detach().numpy(), mode))
    n_world = torch.gather(Rq, 2, axis[:, None, None].expand(-1, 3, 1))[..., 0]
    n_cam = n_world @ R.T
    feats = torch.cat([colors[idx], z[:, None], n_cam], dim=1)
    order = np.argsort(z.detach().numpy(), kind="stable").astype(np.int64)

    out, wsum = _Composite.apply(
        mean2d, conic, opacities[idx], feats, extent, order, H, W, cfg.footprint_cutoff, cfg.num_threads
    )
    # keep the graph connected when every splat is culled
    out = out + 0.0 * opacities.sum()
    color, d_acc, n_acc = out[..., :3], out[..., 3], out[..., 4:7]
    valid = wsum > cfg.weight_eps
    d_exp = torch.where(valid, d_acc / torch.where(valid, wsum, torch.ones_like(wsum)), torch.zeros_like(wsum))
    nrm = torch.linalg.norm(n_acc, dim=-1, keepdim=True)
    has_n = nrm > 1e-12
    normal = torch.where(has_n, n_acc / torch.where(has_n, nrm, torch.ones_like(nrm)), torch.zeros_like(n_acc))
    return {
        "color": color,
        "depth_acc": d_acc,
        "depth_exp": d_exp,
        "normal": normal,
        "weight_sum": wsum,
        "valid": valid,
    }


def render_scene_tensors(st: SceneTensors, R: torch.Tensor, T: torch.Tensor, intrinsics,
                         cfg: RenderConfig = RenderConfig()) -> dict[str, torch.Tensor]:
    flat = st.flat()
    return render_tensors(
        flat["means"], flat["quats"], flat["scales"], flat["opacities"], flat["colors"],
        R, T, intrinsics, cfg, st.mode, st.sigma_min,
    )


def to_buffers(out: dict[str, torch.Tensor], cfg: RenderConfig = RenderConfig()) -> RenderBuffers:
    get = lambda k: out[k].detach().numpy().copy()
    wsum = get("weight_sum")
    valid = wsum > cfg.weight_eps
    d_exp = np.where(valid, get("depth_exp"), np.nan)
    normal = get("normal")
    normal[np.linalg.norm(normal, axis=-1) == 0] = np.nan
    return RenderBuffers(get("color"), get("depth_acc"), d_exp, normal, wsum, cfg.weight_eps)


def render_views(scene: SplatScene, cams: Sequence[Camera], cfg: RenderConfig = RenderConfig(),
                 sigma_min: Optional[float] = None) -> list[RenderBuffers]:
    """Render every Gaussian of every frame into each camera."""
    st = SceneTensors.from_scene(scene, sigma_min=sigma_min)
    results = []
    with torch.no_grad():
        for cam in cams:
            R, T = pose_tensors(cam)
            results.append(to_buffers(render_scene_tensors(st, R, T, cam.intrinsics, cfg), cfg))
    return results


# --------------------------------------------------------------------------
# brute-force oracle


def reference_compositor(scene: SplatScene, cam: Camera, cfg: RenderConfig = RenderConfig(),
                         sigma_min: Optional[float] = None,
                         footprint_floor: float = FOOTPRINT_FLOOR) -> RenderBuffers:
    """Dense per-pixel scan over every splat; single-threaded test oracle."""
    if sigma_min is None:
        sigma_min = 1e-4 * scene.radius()
    K = cam.intrinsics
    H, W = K.height, K.width
    flat = scene.flat()
    screen = []
    for i in range(len(flat["means"])):
        g = Gaussian3D(flat["means"][i], flat["quats"][i], flat["scales"][i],
                       flat["opacities"][i], flat["colors"][i], scene.mode)
        sg = _screen_space(g, cam, cfg, sigma_min)
        if sg is not None:
            screen.append(sg)

    buf = RenderBuffers(
        np.zeros((H, W, 3)), np.zeros((H, W)), np.full((H, W), np.nan),
        np.full((H, W, 3), np.nan), np.zeros((H, W)), cfg.weight_eps,
    )
    if not screen:
        return buf
    order = np.argsort([s.depth for s in screen], kind="stable")
    screen = [screen[i] for i in order]
    mu = np.array([s.mean2d for s in screen])
    inv = np.linalg.inv(np.array([s.cov2d for s in screen]))
    u, v = K.pixel_centers()
    d = np.stack([u.ravel(), v.ravel()], axis=-1)[:, None, :] - mu[None]  # (P, N, 2)
    G = np.exp(-0.5 * np.einsum("pni,nij,pnj->pn", d, inv, d))
    G[G < footprint_floor] = 0.0
    alpha = np.array([s.opacity for s in screen])[None] * G
    trans = np.cumprod(np.concatenate([np.ones((len(d), 1)), 1.0 - alpha[:, :-1]], axis=1), axis=1)
    w = trans * alpha
    color = w @ np.array([s.color for s in screen])
    d_acc = w @ np.array([s.depth for s in screen])
    n_acc = w @ np.array([s.normal_cam for s in screen])
    wsum = 1.0 - np.prod(1.0 - alpha, axis=1)
    buf.color = color.reshape(H, W, 3)
    buf.depth_acc = d_acc.reshape(H, W)
    buf.weight_sum = wsum.reshape(H, W)
    valid = buf.weight_sum > cfg.weight_eps
    with np.errstate(invalid="ignore", divide="ignore"):
        buf.depth_exp = np.where(valid, buf.depth_acc / buf.weight_sum, np.nan)
        nn = np.linalg.norm(n_acc, axis=-1, keepdims=True)
        buf.normal = np.where(nn > 0, n_acc / nn, np.nan).reshape(H, W, 3)
    return buf
