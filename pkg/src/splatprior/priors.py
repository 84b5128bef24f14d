"""Training losses: view synthesis, orientation, alignment, flatness, rendered
normal-depth consistency (RNC) and their weighted total.

Loss functions take :class:`SceneTensors` and return torch scalars so the
optimizer can backpropagate; passing a :class:`SplatScene` returns a float.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from .core import Camera, InvalidInputError, SplatMode, SplatScene
from .raster import RenderConfig, render_scene_tensors
from .tensors import DTYPE, SceneTensors, as_tensor, pose_tensors

DEGENERATE_CROSS = 1e-12


@dataclass(frozen=True)
class PriorWeights:
    lambda_o: float = 0.05
    lambda_a: float = 0.1
    lambda_flat: float = 1000.0
    w0: float = 10.0
    kappa: float = 4.0
    q_quantile: float = 0.95
    epsilon: float = 1e-8
    delta_huber: float = 0.1
    orientation_term: str = "orient"  # "orient" or "rnc"
    rnc_detach_depth: bool = True
    photometric: str = "l1"  # "l1" or "l2"
    ssim_weight: float = 0.0

    def __post_init__(self):
        for name in ("lambda_o", "lambda_a", "lambda_flat", "w0", "kappa", "epsilon", "delta_huber", "ssim_weight"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if not 0.0 < self.q_quantile < 1.0:
            raise InvalidInputError("q_quantile must lie in (0, 1)")
        if self.orientation_term not in ("orient", "rnc"):
            raise InvalidInputError("orientation_term must be 'orient' or 'rnc'")
        if self.photometric not in ("l1", "l2"):
            raise InvalidInputError("photometric must be 'l1' or 'l2'")

    @classmethod
    def none(cls, **kw) -> "PriorWeights":
        """Photometric-only configuration."""
        return cls(lambda_o=0.0, lambda_a=0.0, lambda_flat=0.0, **kw)


@dataclass
class LossReport:
    synthesis: float
    orient: float
    align: float
    flat: float
    rnc: float
    total: float
    terms: dict = field(default_factory=dict, repr=False)  # torch scalars, graph attached

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("synthesis", "orient", "align", "flat", "rnc", "total")}


# --------------------------------------------------------------------------
# local geometry of a mean grid


def central_differences(grid, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
    """Differences of neighboring means around column ``u``, row ``v``."""
    grid = np.asarray(grid, dtype=np.float64)
    H, W = grid.shape[:2]
    if not (1 <= u <= W - 2 and 1 <= v <= H - 2):
        raise InvalidInputError(f"pixel ({u}, {v}) is not interior to a {W}x{H} grid")
    return grid[v, u + 1] - grid[v, u - 1], grid[v + 1, u] - grid[v - 1, u]


def normal_from_means(grid, u: int, v: int) -> Optional[np.ndarray]:
    """Unit normal ``normalize(dy x dx)``; ``None`` when the differences are collinear."""
    dx, dy = central_differences(grid, u, v)
    n = np.cross(dy, dx)
    norm = np.linalg.norm(n)
    if norm <= DEGENERATE_CROSS:
        return None
    return n / norm


def grid_differences(means: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Central differences over all interior pixels of ``(..., H, W, 3)`` grids."""
    dx = means[..., 1:-1, 2:, :] - means[..., 1:-1, :-2, :]
    dy = means[..., 2:, 1:-1, :] - means[..., :-2, 1:-1, :]
    return dx, dy


def grid_normals(means: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Interior normals from neighboring means and the non-degenerate mask."""
    dx, dy = grid_differences(means)
    n = torch.linalg.cross(dy, dx, dim=-1)
    norm = torch.linalg.norm(n, dim=-1, keepdim=True)
    ok = norm[..., 0] > DEGENERATE_CROSS
    safe = torch.where(norm > DEGENERATE_CROSS, norm, torch.ones_like(norm))
    return n / safe, ok


@dataclass
class EdgeWeights:
    weights: np.ndarray  # (H-2, W-2)
    d: np.ndarray  # (H-2, W-2)
    eta: float


def _edge_weights_t(means: torch.Tensor, pw: PriorWeights) -> torch.Tensor:
    """Edge-aware weights for ``(T, H, W, 3)`` grids; quantile taken per frame."""
    dx, dy = grid_differences(means)
    d = torch.linalg.norm(dx, dim=-1) + torch.linalg.norm(dy, dim=-1)
    eta = torch.quantile(d.reshape(d.shape[0], -1), pw.q_quantile, dim=1, interpolation="linear")
    return pw.w0 * torch.exp(-pw.kappa * d / (eta[:, None, None] + pw.epsilon)), d, eta


def edge_weights(grid, pw: PriorWeights = PriorWeights()) -> EdgeWeights:
    """Weights ``w0 exp(-kappa d / (eta + eps))`` on the interior of one mean grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape[0] < 3 or grid.shape[1] < 3:
        raise InvalidInputError("grid needs at least one interior pixel")
    with torch.no_grad():
        w, d, eta = _edge_weights_t(as_tensor(grid)[None], pw)
    return EdgeWeights(w[0].numpy(), d[0].numpy(), float(eta[0]))


def huber(r: torch.Tensor, delta: float) -> torch.Tensor:
    return F.smooth_l1_loss(r, torch.zeros_like(r), reduction="none", beta=delta)


# --------------------------------------------------------------------------
# priors on splat parameters


def _tensors(scene) -> tuple[SceneTensors, bool]:
    if isinstance(scene, SplatScene):
        return SceneTensors.from_scene(scene), True
    return scene, False


def _out(value: torch.Tensor, as_float: bool):
    return float(value.detach()) if as_float else value


def orientation_residuals(st: SceneTensors, pw: PriorWeights):
    """Per-pixel weights, cosine residuals and validity over the interior."""
    normals = st.normals()[:, 1:-1, 1:-1]
    n_hat, ok = grid_normals(st.means)
    w, _, _ = _edge_weights_t(st.means, pw)
    r = 1.0 - (normals * n_hat).sum(-1)
    return w, r, ok


def orientation_loss(scene: Union[SceneTensors, SplatScene], pw: PriorWeights = PriorWeights(),
                     region=None):
    """Mean over valid interior pixels of ``w * huber(1 - <N, N_hat>)``.

    ``region`` is an optional boolean ``(T, H, W)`` mask further restricting
    which pixels count.
    """
    st, as_float = _tensors(scene)
    H, W = st.means.shape[1:3]
    if H < 3 or W < 3:
        raise InvalidInputError("orientation loss needs grids of at least 3x3")
    w, r, ok = orientation_residuals(st, pw)
    if region is not None:
        region = torch.as_tensor(np.asarray(region, dtype=bool)).reshape(st.means.shape[:3])
        ok = ok & region[:, 1:-1, 1:-1]
    count = ok.sum()
    if count == 0:
        return _out(st.means.sum() * 0.0, as_float)
    loss = torch.where(ok, w * huber(r, pw.delta_huber), torch.zeros_like(r)).sum() / count
    return _out(loss, as_float)


def _pose_pair(cam) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(cam, Camera):
        return pose_tensors(cam)
    return cam


def alignment_loss(scene: Union[SceneTensors, SplatScene], frame_poses: Sequence):
    """Mean squared pixel distance between each pixel center and its reprojected mean.

    ``frame_poses`` holds one :class:`Camera` or ``(R, T)`` tensor pair per frame.
    Means behind the camera or outside the image are masked out.
    """
    st, as_float = _tensors(scene)
    if len(frame_poses) != st.num_frames:
        raise InvalidInputError("need one pose per frame")
    total = st.means.sum() * 0.0
    count = 0
    for t, (intr, cam) in enumerate(zip(st.intrinsics, frame_poses)):
        R, T = _pose_pair(cam)
        pc = st.means[t] @ R.T + T
        z = pc[..., 2]
        zpos = z > 0
        zs = torch.where(zpos, z, torch.ones_like(z))
        u = intr.fx * pc[..., 0] / zs + intr.cx
        v = intr.fy * pc[..., 1] / zs + intr.cy
        uu, vv = (torch.as_tensor(a, dtype=DTYPE) for a in intr.pixel_centers())
        mask = zpos & (u >= 0) & (u <= intr.width) & (v >= 0) & (v <= intr.height)
        sq = (u - uu) ** 2 + (v - vv) ** 2
        total = total + torch.where(mask, sq, torch.zeros_like(sq)).sum()
        count += int(mask.sum())
    if count == 0:
        return _out(total, as_float)
    return _out(total / count, as_float)


def flatness_loss(scene: Union[SceneTensors, SplatScene]):
    """Mean over all Gaussians of the smallest scale; zero for 2D splats."""
    st, as_float = _tensors(scene)
    if st.mode == SplatMode.TWO_DGS:
        return _out(st.scales.sum() * 0.0, as_float)
    return _out(st.scales.min(dim=-1).values.mean(), as_float)


# --------------------------------------------------------------------------
# image-space losses


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=DTYPE) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return (g[:, None] * g[None, :])[None, None]


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of two (H, W, C) images over valid 11x11 windows."""
    if min(a.shape[:2]) < 11:
        raise InvalidInputError("SSIM needs images of at least 11x11")
    C = a.shape[-1]
    win = _gaussian_window().expand(C, 1, 11, 11)
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]
    conv = lambda t: F.conv2d(t, win, groups=C)
    mx, my = conv(x), conv(y)
    sxx = conv(x * x) - mx * mx
    syy = conv(y * y) - my * my
    sxy = conv(x * y) - mx * my
    c1, c2 = 0.01**2, 0.03**2
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return s.mean()


def photometric_loss(rendered, target, pw: PriorWeights = PriorWeights()):
    """Mean absolute (or squared) error plus an optional ``(1 - SSIM) / 2`` term."""
    as_float = not isinstance(rendered, torch.Tensor)
    rendered = rendered if isinstance(rendered, torch.Tensor) else as_tensor(rendered)
    target = target if isinstance(target, torch.Tensor) else as_tensor(target)
    if rendered.shape != target.shape:
        raise InvalidInputError(f"shape mismatch {tuple(rendered.shape)} vs {tuple(target.shape)}")
    diff = rendered - target
    loss = diff.abs().mean() if pw.photometric == "l1" else (diff * diff).mean()
    if pw.ssim_weight > 0:
        loss = loss + pw.ssim_weight * (1.0 - ssim(rendered, target)) / 2.0
    return _out(loss, as_float)


def rnc_loss(buffers, intrinsics, detach_depth: bool = True, weight_eps: float = 1e-4,
             depth: str = "expected"):
    """Consistency between rendered normals and normals of the back-projected depth.

    ``buffers`` is the dict returned by :func:`raster.render_tensors` or a
    :class:`raster.RenderBuffers`. ``depth`` picks the expected or the
    accumulated depth image.
    """
    as_float = not isinstance(buffers, dict)
    if as_float:
        b = buffers
        buffers = {
            "depth_exp": as_tensor(np.nan_to_num(b.depth_exp)),
            "depth_acc": as_tensor(b.depth_acc),
            "normal": as_tensor(np.nan_to_num(b.normal)),
            "weight_sum": as_tensor(b.weight_sum),
        }
        weight_eps = b.weight_eps
    depth = buffers["depth_exp" if depth == "expected" else "depth_acc"]
    if detach_depth:
        depth = depth.detach()
    wsum = buffers["weight_sum"]
    rays = as_tensor(intrinsics.rays())
    points = rays * depth[..., None]
    n_hat, ok = grid_normals(points)
    defined = wsum > weight_eps
    c = defined[1:-1, 1:-1]
    valid = ok & c & defined[1:-1, 2:] & defined[1:-1, :-2] & defined[2:, 1:-1] & defined[:-2, 1:-1]
    n_r = buffers["normal"][1:-1, 1:-1]
    valid = valid & (torch.linalg.norm(n_r, dim=-1) > 0)
    count = valid.sum()
    if count == 0:
        return _out(wsum.sum() * 0.0, as_float)
    term = wsum[1:-1, 1:-1] * (1.0 - (n_r * n_hat).sum(-1))
    return _out(torch.where(valid, term, torch.zeros_like(term)).sum() / count, as_float)


# --------------------------------------------------------------------------
# total objective


def total_loss(
    scene: Union[SceneTensors, SplatScene],
    cams: Sequence[Camera],
    targets: Sequence,
    pw: PriorWeights = PriorWeights(),
    frame_poses: Optional[Sequence] = None,
    render_cfg: RenderConfig = RenderConfig(),
    target_poses: Optional[Sequence] = None,
) -> LossReport:
    """``synthesis + lambda_o orient + lambda_a align + lambda_flat flat``.

    ``synthesis`` sums the photometric loss over target views. With
    ``pw.orientation_term == "rnc"`` the RNC term takes the orientation slot.
    ``target_poses`` optionally overrides target camera poses with ``(R, T)``
    tensors (used for pose refinement).
    """
    st, _ = _tensors(scene)
    if len(cams) != len(targets):
        raise InvalidInputError("need one target image per camera")
    zero = st.means.sum() * 0.0
    synthesis = zero
    rnc = zero
    for i, (cam, target) in enumerate(zip(cams, targets)):
        R, T = target_poses[i] if target_poses is not None else pose_tensors(cam)
        out = render_scene_tensors(st, R, T, cam.intrinsics, render_cfg)
        synthesis = synthesis + photometric_loss(out["color"], as_tensor(target), pw)
        if pw.orientation_term == "rnc" and pw.lambda_o > 0:
            rnc = rnc + rnc_loss(out, cam.intrinsics, pw.rnc_detach_depth, render_cfg.weight_eps,
                                  render_cfg.depth) / len(cams)

    orient = orientation_loss(st, pw) if pw.orientation_term == "orient" else zero
    if frame_poses is not None:
        align = alignment_loss(st, frame_poses)
    elif pw.lambda_a > 0:
        raise InvalidInputError("alignment loss needs per-frame poses")
    else:
        align = zero
    flat = flatness_loss(st)

    orient_slot = orient if pw.orientation_term == "orient" else rnc
    total = synthesis + pw.lambda_o * orient_slot + pw.lambda_a * align + pw.lambda_flat * flat
    terms = {"synthesis": synthesis, "orient": orient, "align": align, "flat": flat, "rnc": rnc, "total": total}
    values = {k: float(v.detach()) for k, v in terms.items()}
    return LossReport(**values, terms=terms)
