"""Run configuration, loaded from JSON with unknown keys rejected."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .core import InvalidInputError
from .optim import FitConfig, PoseRefineConfig
from .pose import RansacConfig
from .priors import PriorWeights
from .raster import RenderConfig

SEED_ENV = "SPLATPRIOR_SEED"


@dataclass(frozen=True)
class SceneConfig:
    width: int = 32
    height: int = 32
    baseline_frac: float = 0.25
    rot_deg: float = 10.0
    mode: str = "3dgs"
    footprint_scale: float = 0.3


@dataclass(frozen=True)
class InitConfig:
    """Random-depth initialization used by ``fit`` when no init scene is given."""

    scale_range: tuple = (0.8, 1.25)
    smooth: float = 0.0
    corr_px: float = 8.0
    noise: float = 0.0


@dataclass(frozen=True)
class MeshConfig:
    n_views: int = 20
    voxel_size: Optional[float] = None
    trunc_voxels: float = 4.0
    samples: int = 100_000
    icp: bool = False
    icp_iters: int = 50


@dataclass(frozen=True)
class Config:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    init: InitConfig = field(default_factory=InitConfig)
    priors: PriorWeights = field(default_factory=PriorWeights)
    render: RenderConfig = field(default_factory=RenderConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    refine: PoseRefineConfig = field(default_factory=PoseRefineConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)

    def fit_config(self) -> FitConfig:
        return dataclasses.replace(self.fit, priors=self.priors, render=self.render)

    def refine_config(self) -> PoseRefineConfig:
        return dataclasses.replace(self.refine, priors=self.priors, render=self.render)

    def ransac_config(self) -> RansacConfig:
        return dataclasses.replace(self.ransac, seed=self.seed)


# fields filled from sibling sections instead of their own JSON keys
_DERIVED = {FitConfig: {"priors", "render"}, PoseRefineConfig: {"priors", "render"}, RansacConfig: {"seed"}}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise InvalidInputError(f"{where}: expected an object")
    kinds = {f.name: f for f in dataclasses.fields(cls) if f.name not in _DERIVED.get(cls, ())}
    unknown = sorted(set(data) - set(kinds))
    if unknown:
        raise InvalidInputError(f"{where}: unknown keys {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if not dataclasses.is_dataclass(kinds[name].type) else None
        sub = _NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{where}: {exc}") from exc


_NESTED = {
    (Config, "scene"): SceneConfig,
    (Config, "init"): InitConfig,
    (Config, "priors"): PriorWeights,
    (Config, "render"): RenderConfig,
    (Config, "fit"): FitConfig,
    (Config, "refine"): PoseRefineConfig,
    (Config, "ransac"): RansacConfig,
    (Config, "mesh"): MeshConfig,
}


def config_from_dict(data: dict) -> Config:
    return _build(Config, data, "config")


def load_config(path: Optional[os.PathLike] = None, seed: Optional[int] = None) -> Config:
    """Defaults, overridden by a JSON file, then by ``SPLATPRIOR_SEED``, then by ``seed``."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_dict(data)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(env))
        except ValueError as exc:
            raise InvalidInputError(f"{SEED_ENV} must be an integer") from exc
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def config_to_dict(cfg: Config) -> dict:
    out = dataclasses.asdict(cfg)
    for section in ("fit", "refine"):
        out[section].pop("priors")
        out[section].pop("render")
    out["ransac"].pop("seed")
    return out
