"""Geometric priors, differentiable CPU rendering and evaluation for pixel-aligned Gaussian splats."""
from .core import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    DegenerateConfigurationError,
    Gaussian3D,
    InvalidInputError,
    NumericalError,
    SplatFrame,
    SplatMode,
    SplatScene,
    build_covariance,
    gaussian_normal,
)
from .optim import FitConfig, FitResult, PoseRefineConfig, fit_scene, gradient_check, refine_pose
from .pose import (
    EstimationFailedError,
    PoseError,
    RansacConfig,
    pnp_least_squares,
    pnp_ransac,
    pose_auc,
    pose_errors,
    relative_pose_from_scene,
)
from .priors import (
    LossReport,
    PriorWeights,
    alignment_loss,
    edge_weights,
    flatness_loss,
    orientation_loss,
    photometric_loss,
    rnc_loss,
    total_loss,
)
from .raster import BACKEND, RenderBuffers, RenderConfig, reference_compositor, render_views

__version__ = "0.1.0"

__all__ = [
    "Camera", "CameraIntrinsics", "CameraPose", "DegenerateConfigurationError", "Gaussian3D",
    "InvalidInputError", "NumericalError", "SplatFrame", "SplatMode", "SplatScene",
    "build_covariance", "gaussian_normal",
    "FitConfig", "FitResult", "PoseRefineConfig", "fit_scene", "gradient_check", "refine_pose",
    "EstimationFailedError", "PoseError", "RansacConfig", "pnp_least_squares", "pnp_ransac",
    "pose_auc", "pose_errors", "relative_pose_from_scene",
    "LossReport", "PriorWeights", "alignment_loss", "edge_weights", "flatness_loss",
    "orientation_loss", "photometric_loss", "rnc_loss", "total_loss",
    "BACKEND", "RenderBuffers", "RenderConfig", "reference_compositor", "render_views",
]
