"""Per-scene fitting, photometric pose refinement and finite-difference checks."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .core import Camera, CameraPose, InvalidInputError, NumericalError, SplatMode, SplatScene, project_to_rotation
from .priors import (
    PriorWeights,
    alignment_loss,
    flatness_loss,
    orientation_loss,
    photometric_loss,
    rnc_loss,
    total_loss,
)
from .raster import RenderConfig, render_scene_tensors
from .tensors import DTYPE, SceneTensors, as_tensor, pose_tensors, retract_pose

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "synthesis", "orient", "align", "flat", "rnc", "total")
_OPACITY_CLAMP = 1e-6


@dataclass(frozen=True)
class FitConfig:
    """Adam settings per parameter class. ``lr_means`` is relative to the scene radius."""

    iterations: int = 2000
    lr_means: float = 1e-3
    lr_quats: float = 1e-3
    lr_log_scales: float = 5e-3
    lr_opacity_logits: float = 5e-2
    lr_colors: float = 2.5e-3
    lr_final_factor: float = 1.0  # exponential decay to this multiple by the last step
    priors: PriorWeights = field(default_factory=PriorWeights)
    render: RenderConfig = field(default_factory=RenderConfig)
    scene_radius: Optional[float] = None

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidInputError("iterations must be nonnegative")
        lrs = (self.lr_means, self.lr_quats, self.lr_log_scales, self.lr_opacity_logits, self.lr_colors)
        if min(lrs) <= 0 or self.lr_final_factor <= 0:
            raise InvalidInputError("step sizes must be positive")


@dataclass
class FitResult:
    scene: SplatScene
    trace: list[dict]

    def write_trace(self, path) -> None:
        write_trace(self.trace, path)


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in TRACE_COLUMNS})


def _check_finite(report, iteration: int) -> None:
    for name, value in report.as_dict().items():
        if not math.isfinite(value):
            raise NumericalError(f"non-finite {name} loss at iteration {iteration}")


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, _OPACITY_CLAMP, 1.0 - _OPACITY_CLAMP)
    return np.log(p) - np.log1p(-p)


class _Params:
    """Unconstrained optimization variables for a splat scene."""

    def __init__(self, scene: SplatScene, sigma_min: float):
        st = SceneTensors.from_scene(scene, sigma_min=sigma_min)
        self.template = scene
        self.mode = scene.mode
        self.intrinsics = st.intrinsics
        self.sigma_min = st.sigma_min
        self.means = st.means.detach().clone().requires_grad_(True)
        self.quats = st.quats.detach().clone().requires_grad_(True)
        scales = st.scales.detach().numpy()
        n_free = 2 if self.mode == SplatMode.TWO_DGS else 3
        tiny = np.finfo(np.float64).tiny
        self.log_scales = as_tensor(np.log(np.maximum(scales[..., :n_free], tiny)), True)
        self.opacity_logits = as_tensor(_logit(st.opacities.detach().numpy()), True)
        self.colors = st.colors.detach().clone().requires_grad_(True)
        # start on the constraint set so the first step does not jump onto it
        self.project()

    def groups(self, cfg: FitConfig, radius: float) -> list[dict]:
        return [
            {"params": [self.means], "lr": cfg.lr_means * radius, "name": "means"},
            {"params": [self.quats], "lr": cfg.lr_quats, "name": "quats"},
            {"params": [self.log_scales], "lr": cfg.lr_log_scales, "name": "log_scales"},
            {"params": [self.opacity_logits], "lr": cfg.lr_opacity_logits, "name": "opacity_logits"},
            {"params": [self.colors], "lr": cfg.lr_colors, "name": "colors"},
        ]

    def tensors(self) -> SceneTensors:
        scales = torch.exp(self.log_scales)
        if self.mode == SplatMode.TWO_DGS:
            scales = torch.cat([scales, torch.zeros_like(scales[..., :1])], dim=-1)
        return SceneTensors(
            self.means, self.quats, scales, torch.sigmoid(self.opacity_logits), self.colors,
            self.intrinsics, self.mode, self.sigma_min,
        )

    @torch.no_grad()
    def project(self) -> None:
        """Renormalize quaternions and keep colors in range after a step."""
        self.quats /= torch.linalg.norm(self.quats, dim=-1, keepdim=True)
        self.colors.clamp_(0.0, 1.0)

    def scene(self) -> SplatScene:
        with torch.no_grad():
            return self.tensors().to_scene(self.template)


def _frame_poses(scene: SplatScene, frame_poses, pw: PriorWeights):
    if frame_poses is not None or pw.lambda_a == 0:
        return frame_poses
    poses = [f.gt_pose for f in scene.frames]
    if any(p is None for p in poses):
        raise InvalidInputError("alignment loss needs per-frame poses")
    return [pose_tensors(Camera(f.intrinsics, p)) for f, p in zip(scene.frames, poses)]


def render_targets(scene: SplatScene, cams: Sequence[Camera], cfg: FitConfig = FitConfig()) -> list[np.ndarray]:
    """Colors of ``scene`` rendered through the parameterization that ``fit_scene`` optimizes.

    Fitting ``scene`` to these images starts at an exact stationary point,
    which the plain renderer cannot guarantee: opacities are clamped away
    from 0 and 1 and the torch path differs from ``render_views`` in the
    last bits.
    """
    radius = cfg.scene_radius if cfg.scene_radius is not None else scene.radius()
    st = _Params(scene, 1e-4 * radius).tensors()
    return [
        render_scene_tensors(st, *pose_tensors(cam), cam.intrinsics, cfg.render)["color"].detach().numpy()
        for cam in cams
    ]


def fit_scene(
    init: SplatScene,
    cams: Sequence[Camera],
    targets: Sequence[np.ndarray],
    cfg: FitConfig = FitConfig(),
    frame_poses: Optional[Sequence] = None,
    callback: Optional[Callable[[int, SceneTensors], None]] = None,
) -> FitResult:
    """Fit splat parameters to target images with Adam; cameras stay fixed.

    ``frame_poses`` gives each frame's source camera for the alignment term
    and defaults to the frames' stored poses.
    """
    if len(cams) == 0 or len(cams) != len(targets):
        raise InvalidInputError("need at least one camera and one target per camera")
    pw = cfg.priors
    poses = _frame_poses(init, frame_poses, pw)
    radius = cfg.scene_radius if cfg.scene_radius is not None else init.radius()
    params = _Params(init, 1e-4 * radius)
    opt = torch.optim.Adam(params.groups(cfg, radius), betas=(0.9, 0.999), eps=1e-15)
    base_lrs = [g["lr"] for g in opt.param_groups]
    targets = [as_tensor(t) for t in targets]
    trace = []
    for it in range(cfg.iterations + 1):
        st = params.tensors()
        report = total_loss(st, cams, targets, pw, poses, cfg.render)
        _check_finite(report, it)
        trace.append({"iteration": it, **report.as_dict()})
        if it == cfg.iterations:
            break
        if callback is not None:
            callback(it, st)
        opt.zero_grad()
        report.terms["total"].backward()
        for group in opt.param_groups:
            for p in group["params"]:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NumericalError(f"non-finite gradient for {group['name']} at iteration {it}")
        decay = cfg.lr_final_factor ** (it / max(cfg.iterations - 1, 1))
        for group, lr in zip(opt.param_groups, base_lrs):
            group["lr"] = lr * decay
        opt.step()
        params.project()
    return FitResult(params.scene(), trace)


# --------------------------------------------------------------------------
# pose refinement


@dataclass(frozen=True)
class PoseRefineConfig:
    iterations: int = 200
    lr: float = 1e-3
    lr_final_factor: float = 0.1
    priors: PriorWeights = field(default_factory=PriorWeights)
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be positive")
        if self.lr <= 0 or self.lr_final_factor <= 0:
            raise InvalidInputError("step sizes must be positive")


def refine_pose(scene: SplatScene, cam_init: Camera, target: np.ndarray,
                cfg: PoseRefineConfig = PoseRefineConfig()) -> Camera:
    """Minimize the training loss over the target camera pose only.

    The pose is updated with Adam on the six-dimensional tangent
    ``(omega, rho)`` and retracted back onto rigid motions after every step.
    Splat-only terms are constant here, so only image terms move the pose.
    """
    st = SceneTensors.from_scene(scene)
    tgt = as_tensor(target)
    pose = cam_init.pose
    m = np.zeros(6)
    v = np.zeros(6)
    b1, b2, eps = 0.9, 0.999, 1e-15
    pw = replace(cfg.priors, lambda_a=0.0)
    for it in range(cfg.iterations):
        xi = torch.zeros(6, dtype=DTYPE, requires_grad=True)
        R, T = retract_pose(pose, xi)
        report = total_loss(st, [cam_init], [tgt], pw, None, cfg.render, target_poses=[(R, T)])
        _check_finite(report, it)
        report.terms["total"].backward()
        g = xi.grad.numpy().copy()
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite pose gradient at iteration {it}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** (it + 1))
        vhat = v / (1 - b2 ** (it + 1))
        lr = cfg.lr * cfg.lr_final_factor ** (it / max(cfg.iterations - 1, 1))
        step = -lr * mhat / (np.sqrt(vhat) + eps)
        with torch.no_grad():
            R, T = retract_pose(pose, torch.as_tensor(step))
        pose = CameraPose(project_to_rotation(R.numpy()), T.numpy())
    return cam_init.with_pose(pose)


# --------------------------------------------------------------------------
# finite-difference checks

PARAM_CLASSES = ("means", "quats", "scales", "opacities", "colors")
LOSSES = ("photometric", "orient", "align", "flat", "rnc", "total", "color", "depth_acc", "depth_exp")
GRADCHECK_RENDER = RenderConfig(footprint_cutoff=1e-12)


def _loss_fn(name: str, cams, targets, pw: PriorWeights, render: RenderConfig, frame_poses, seed: int):
    """Scalar function of ``(SceneTensors, pose tensors)`` for the selected loss."""
    rng = np.random.default_rng(seed)
    probes = {}

    def image_out(st, poses):
        outs = []
        for cam, (R, T) in zip(cams, poses):
            outs.append(render_scene_tensors(st, R, T, cam.intrinsics, render))
        return outs

    def fn(st: SceneTensors, poses) -> torch.Tensor:
        if name == "orient":
            return orientation_loss(st, pw)
        if name == "align":
            return alignment_loss(st, frame_poses)
        if name == "flat":
            return flatness_loss(st)
        if name == "total":
            return total_loss(st, cams, targets, pw, frame_poses, render, target_poses=poses).terms["total"]
        outs = image_out(st, poses)
        if name == "photometric":
            return sum(photometric_loss(o["color"], as_tensor(t), pw) for o, t in zip(outs, targets))
        if name == "rnc":
            return sum(rnc_loss(o, c.intrinsics, pw.rnc_detach_depth, render.weight_eps) for o, c in zip(outs, cams))
        # raw render outputs, reduced with fixed random probe images
        total = 0.0
        for i, o in enumerate(outs):
            key = (name, i)
            if key not in probes:
                probes[key] = as_tensor(rng.standard_normal(tuple(o[name].shape)))
            total = total + (o[name] * probes[key]).sum()
        return total

    return fn


def gradient_check(
    loss: str,
    scene: SplatScene,
    cams: Sequence[Camera] = (),
    targets: Sequence[np.ndarray] = (),
    pw: PriorWeights = PriorWeights(),
    frame_poses: Optional[Sequence] = None,
    render: RenderConfig = GRADCHECK_RENDER,
    step: float = 1e-5,
    include_pose: bool = True,
    seed: int = 0,
) -> dict[str, float]:
    """Max relative error ``max|analytic - numeric| / max|numeric|`` per parameter class.

    Central differences with the given step, in float64. Classes whose
    numeric gradient is identically zero report the absolute error instead.
    The ``pose`` class perturbs the tangent of every camera pose at once.
    The RNC loss is checked with its depth path attached.
    """
    if loss not in LOSSES:
        raise InvalidInputError(f"unknown loss {loss!r}; choose from {', '.join(LOSSES)}")
    if loss in ("photometric", "rnc", "total", "color", "depth_acc", "depth_exp") and not cams:
        raise InvalidInputError(f"loss {loss!r} needs cameras")
    if frame_poses is None:
        frame_poses = [Camera(f.intrinsics, f.gt_pose or CameraPose()) for f in scene.frames]
    frame_poses = [pose_tensors(c) if isinstance(c, Camera) else c for c in frame_poses]
    if loss == "rnc":
        # a detached depth drops part of the true derivative, so check the full one
        pw = replace(pw, rnc_detach_depth=False)
    fn = _loss_fn(loss, cams, targets, pw, render, frame_poses, seed)
    base = SceneTensors.from_scene(scene)
    values = {k: getattr(base, k).detach().clone() for k in PARAM_CLASSES}
    image_loss = loss not in ("orient", "align", "flat")
    use_pose = include_pose and image_loss

    def evaluate(vals: dict, xi: Optional[torch.Tensor]):
        st = replace(base, **vals)
        poses = [retract_pose(c.pose, xi[6 * i:6 * i + 6]) for i, c in enumerate(cams)] if xi is not None \
            else [pose_tensors(c) for c in cams]
        return fn(st, poses)

    leaves = {k: v.clone().requires_grad_(True) for k, v in values.items()}
    xi0 = torch.zeros(6 * len(cams), dtype=DTYPE, requires_grad=True) if use_pose else None
    out = evaluate(leaves, xi0)
    inputs = list(leaves.values()) + ([xi0] if use_pose else [])
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    analytic = {k: (g if g is not None else torch.zeros_like(leaves[k])).numpy()
                for k, g in zip(leaves, grads)}
    if use_pose:
        analytic["pose"] = grads[-1].numpy() if grads[-1] is not None else np.zeros(6 * len(cams))

    def numeric_for(key: str) -> np.ndarray:
        shape = (6 * len(cams),) if key == "pose" else values[key].shape
        num = np.zeros(shape)
        flat = num.reshape(-1)
        for j in range(flat.size):
            fs = []
            for sgn in (1.0, -1.0):
                with torch.no_grad():
                    if key == "pose":
                        xi = torch.zeros(6 * len(cams), dtype=DTYPE)
                        xi[j] = sgn * step
                        fs.append(float(evaluate(values, xi)))
                    else:
                        vals = dict(values)
                        t = values[key].clone()
                        t.view(-1)[j] += sgn * step
                        vals[key] = t
                        fs.append(float(evaluate(vals, xi0.detach() * 0 if use_pose else None)))
            flat[j] = (fs[0] - fs[1]) / (2 * step)
        return num

    report = {}
    for key in analytic:
        num = numeric_for(key)
        err = np.abs(analytic[key] - num).max(initial=0.0)
        scale = np.abs(num).max(initial=0.0)
        report[key] = float(err / scale) if scale > 0 else float(err)
    return report
