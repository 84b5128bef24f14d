"""Monocular depth metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import InvalidInputError


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    delta_110: float
    delta_125: float
    valid_count: int
    scale: float = 1.0

    def as_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred, gt, align_scale: bool = False) -> DepthMetrics:
    """AbsRel and ratio-threshold accuracies over pixels with finite ``gt > 0``.

    With ``align_scale`` the prediction is first multiplied by the median of
    ``gt / pred``. Non-positive or non-finite predictions count as failures
    for the thresholds and contribute ``|pred - gt| / gt`` with ``pred = 0``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"depth shapes differ: {pred.shape} vs {gt.shape}")
    valid = np.isfinite(gt) & (gt > 0)
    if not valid.any():
        raise InvalidInputError("no valid ground-truth depth")
    p = np.where(np.isfinite(pred), pred, 0.0)[valid]
    g = gt[valid]
    scale = 1.0
    if align_scale:
        pos = p > 0
        if not pos.any():
            raise InvalidInputError("no positive predictions to align")
        scale = float(np.median(g[pos] / p[pos]))
        p = p * scale
    abs_rel = float(np.mean(np.abs(p - g) / g))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, np.maximum(p / g, g / p), np.inf)
    return DepthMetrics(
        abs_rel, float(np.mean(ratio < 1.10)), float(np.mean(ratio < 1.25)), int(valid.sum()), scale
    )
