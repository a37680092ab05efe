"""Run configuration: one YAML document mirroring every module's parameters.

Top-level keys (all optional, defaults shown by ``pod4d --print-config``):

  seed, pipeline, horizon, workers
  lidar        LidarModel fields
  scene        SceneConfig fields; ``classes`` maps class -> {count, speed, dims, dims_jitter}
  dataset      scenes, frames_per_scene, frame_interval, horizons
  ground       GroundParams fields
  compensation method (mean | per_ray)
  vfe          out_channels
  grid         spconv4d / dsvt4d: VoxelGridConfig fields
  backbone     BackboneSpec fields (in_channels follows vfe.out_channels)
  window       WindowConfig fields (d_model follows vfe.out_channels)
  bev          spconv4d_mode, dsvt4d_mode, dump
  decode       DecodeParams fields
  eval         EvalConfig fields
  weights      path to a weight-bundle manifest, or null for seeded initialization
  bench        counts, repeats, channels, seed
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .decode import DecodeParams
from .evaluation import EvalConfig
from .preprocess import GroundParams
from .sim import LidarModel, SceneConfig
from .sparse4d.backbone import BackboneSpec
from .voxelizer import VoxelGridConfig
from .window4d import WindowConfig

PIPELINES = ("spconv4d", "dsvt4d")
DEFAULT_HORIZONS = (0.1, 0.2, 0.5)


class ConfigError(ValueError):
    pass


def default_scene() -> dict:
    return {
        "classes": {
            "car": {"count": 6, "speed": [8.0, 15.0]},
            "pedestrian": {"count": 2, "speed": [0.0, 1.5]},
            "cyclist": {"count": 1, "speed": [3.0, 6.0]},
        },
        "ego_speed": [10.0, 10.0],
    }


def _defaults() -> dict:
    return {
        "seed": 0,
        "pipeline": "spconv4d",
        "horizon": 0.5,
        "workers": 1,
        "lidar": {},
        "scene": default_scene(),
        "dataset": {"scenes": 10, "frames_per_scene": 1, "frame_interval": 0.1, "horizons": list(DEFAULT_HORIZONS)},
        "ground": {},
        "compensation": {"method": "mean"},
        "vfe": {"out_channels": 64},
        "grid": {
            "spconv4d": {"voxel_size": [0.08, 0.08, 0.25], "grid_shape": [1888, 1280, 64, 2]},
            "dsvt4d": {"voxel_size": [0.32, 0.32, 16.0], "grid_shape": [472, 320, 1, 2]},
        },
        "backbone": {},
        "window": {},
        "bev": {"spconv4d_mode": "concat_over_z", "dsvt4d_mode": "max_over_z", "dump": False},
        "decode": {},
        "eval": {},
        "weights": None,
        "bench": {"counts": [10000, 20000, 50000, 100000, 200000, 500000], "repeats": 3,
                  "channels": 16, "seed": 0},
    }


FREE_FORM = {"lidar", "scene", "ground", "backbone", "window", "decode", "eval", "spconv4d", "dsvt4d"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    """Overlay ``override`` on ``base``; fixed sections reject unknown keys,
    free-form sections are checked later by their typed constructors."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if k in FREE_FORM:
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k} must be a mapping")
            out[k].update(copy.deepcopy(v))
        elif isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build(cls, fields: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(fields) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in fields.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} section: {exc}") from exc


@dataclass
class RunConfig:
    raw: dict = field(default_factory=_defaults)

    def __post_init__(self):
        r = self.raw
        if r["pipeline"] not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}")
        if not float(r["horizon"]) > 0:
            raise ConfigError("horizon must be positive")
        if int(r["workers"]) < 1:
            raise ConfigError("workers must be >= 1")
        if r["compensation"].get("method") not in ("mean", "per_ray"):
            raise ConfigError("compensation.method must be 'mean' or 'per_ray'")
        ds = r["dataset"]
        if int(ds["scenes"]) < 0 or int(ds["frames_per_scene"]) < 1 or float(ds["frame_interval"]) <= 0:
            raise ConfigError("dataset needs scenes >= 0, frames_per_scene >= 1, frame_interval > 0")
        if any(float(h) <= 0 for h in ds["horizons"]):
            raise ConfigError("dataset horizons must be positive")
        # build every typed section once so errors surface at load time
        self.lidar, self.scene, self.ground, self.decode, self.eval
        for p in PIPELINES:
            self.grid(p)
        self.backbone, self.window
        if self.weights_path is not None and not self.weights_path.exists():
            raise ConfigError(f"weights manifest {self.weights_path} does not exist")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def pipeline(self) -> str:
        return self.raw["pipeline"]

    @property
    def horizon(self) -> float:
        return float(self.raw["horizon"])

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def lidar(self) -> LidarModel:
        return _build(LidarModel, self.raw["lidar"], "lidar")

    @property
    def scene(self) -> SceneConfig:
        return _build(SceneConfig, self.raw["scene"], "scene")

    @property
    def ground(self) -> GroundParams:
        return _build(GroundParams, self.raw["ground"], "ground")

    @property
    def compensation_method(self) -> str:
        return self.raw["compensation"]["method"]

    @property
    def vfe_channels(self) -> int:
        return int(self.raw["vfe"]["out_channels"])

    def grid(self, pipeline: str | None = None) -> VoxelGridConfig:
        p = pipeline or self.pipeline
        return _build(VoxelGridConfig, self.raw["grid"][p], f"grid.{p}")

    @property
    def backbone(self) -> BackboneSpec:
        fields = dict(self.raw["backbone"])
        fields["in_channels"] = self.vfe_channels
        return _build(BackboneSpec, fields, "backbone")

    @property
    def window(self) -> WindowConfig:
        fields = dict(self.raw["window"])
        fields["d_model"] = self.vfe_channels
        if "shifts" in fields:
            fields["shifts"] = tuple(tuple(s) for s in fields["shifts"])
        return _build(WindowConfig, fields, "window")

    def bev_mode(self, pipeline: str | None = None) -> str:
        return self.raw["bev"][f"{pipeline or self.pipeline}_mode"]

    @property
    def decode(self) -> DecodeParams:
        return _build(DecodeParams, self.raw["decode"], "decode")

    @property
    def eval(self) -> EvalConfig:
        return _build(EvalConfig, self.raw["eval"], "eval")

    @property
    def weights_path(self) -> Path | None:
        w = self.raw["weights"]
        return Path(w) if w else None

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    @property
    def bench(self) -> dict:
        return self.raw["bench"]

    def with_overrides(self, **kw) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is not None:
                raw[k] = v
        return RunConfig(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    raw = _defaults()
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = _merge(raw, data)
    if overrides:
        raw = _merge(raw, overrides)
    return RunConfig(raw)
