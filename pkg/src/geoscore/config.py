"""Run configuration: a strict YAML schema shared by all CLI commands.

Unknown keys are rejected with the offending key named, numeric fields are
range-checked, and referenced paths must exist at load time. Loading then
re-serializing a config is idempotent.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import CameraIntrinsics, CameraPose, sample_hemisphere_pose
from .noising import NoisingParams
from .ply import read_ply
from .scenes import Scene, builtin_scene
from .score import NoiseSchedule


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key."""


_BUILTIN_SCENES = ("plane", "sphere", "two_plane")


def _require_keys(block: dict, allowed: set[str], context: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {context}")


def _get_num(block: dict, key: str, context: str, lo=None, hi=None, default=None):
    if key not in block:
        if default is None:
            raise ConfigError(f"missing key {key!r} in {context}")
        return default
    v = block[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ConfigError(f"key {key!r} in {context} must be a finite number")
    if lo is not None and v < lo:
        raise ConfigError(f"key {key!r} in {context} must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"key {key!r} in {context} must be <= {hi}")
    return v


@dataclass
class CameraConfig:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    radius: float
    target: tuple[float, float, float]
    azimuth_deg: list[float]
    elevation_deg: list[float]

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            width=self.width, height=self.height,
        )

    @property
    def poses(self) -> list[CameraPose]:
        return [
            sample_hemisphere_pose(
                math.radians(a), math.radians(e), self.radius, self.target
            )
            for a, e in zip(self.azimuth_deg, self.elevation_deg)
        ]


@dataclass
class OptimizerConfig:
    iterations: int = 100
    learning_rate: float = 0.4
    lambda_sim: float = 1.0
    strategy: str = "consistent"
    loss_threshold: float = 0.05


@dataclass
class RunConfig:
    scene_source: str
    camera: CameraConfig
    noising: NoisingParams
    schedule: NoiseSchedule
    optimizer: OptimizerConfig
    output_dir: str
    seed: int
    schedule_block: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def load_scene(self) -> Scene:
        if self.scene_source in _BUILTIN_SCENES:
            return builtin_scene(self.scene_source)
        path = (self.base_dir / self.scene_source).resolve()
        cloud = read_ply(path)
        return Scene(name=Path(self.scene_source).stem, cloud=cloud)

    def to_dict(self) -> dict:
        n = self.noising
        cam = self.camera
        return {
            "scene": {"source": self.scene_source},
            "camera": {
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
                "radius": cam.radius, "target": list(cam.target),
                "azimuth_deg": list(cam.azimuth_deg),
                "elevation_deg": list(cam.elevation_deg),
            },
            "noising": {
                "upsample_n": n.upsample_n,
                "upsample_std": n.upsample_std,
                "depth_tolerance": n.depth_tolerance,
                "sphere_radius_factor": n.sphere_radius_factor,
                "sphere_points": n.sphere_points,
                "seed": n.seed,
            },
            "schedule": dict(self.schedule_block),
            "optimizer": {
                "iterations": self.optimizer.iterations,
                "learning_rate": self.optimizer.learning_rate,
                "lambda_sim": self.optimizer.lambda_sim,
                "strategy": self.optimizer.strategy,
                "loss_threshold": self.optimizer.loss_threshold,
            },
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def _parse_camera(block: dict) -> CameraConfig:
    allowed = {"fx", "fy", "cx", "cy", "width", "height", "radius", "target",
               "azimuth_deg", "elevation_deg"}
    _require_keys(block, allowed, "camera")
    width = int(_get_num(block, "width", "camera", lo=1))
    height = int(_get_num(block, "height", "camera", lo=1))
    target = block.get("target", [0.0, 0.0, 0.0])
    if not (isinstance(target, (list, tuple)) and len(target) == 3):
        raise ConfigError("key 'target' in camera must be a 3-vector")
    az = block.get("azimuth_deg", 0.0)
    el = block.get("elevation_deg", 15.0)
    az = [float(a) for a in (az if isinstance(az, list) else [az])]
    el = [float(e) for e in (el if isinstance(el, list) else [el])]
    if len(el) == 1 and len(az) > 1:
        el = el * len(az)
    if len(az) != len(el):
        raise ConfigError("camera azimuth_deg and elevation_deg length mismatch")
    for e in el:
        if not (0.0 <= e <= 90.0):
            raise ConfigError("key 'elevation_deg' in camera must lie in [0, 90]")
    return CameraConfig(
        fx=float(_get_num(block, "fx", "camera", lo=1e-9)),
        fy=float(_get_num(block, "fy", "camera", lo=1e-9)),
        cx=float(_get_num(block, "cx", "camera", lo=0)),
        cy=float(_get_num(block, "cy", "camera", lo=0)),
        width=width,
        height=height,
        radius=float(_get_num(block, "radius", "camera", lo=1e-9)),
        target=tuple(float(t) for t in target),
        azimuth_deg=az,
        elevation_deg=el,
    )


def _parse_noising(block: dict) -> NoisingParams:
    allowed = {"upsample_n", "upsample_std", "depth_tolerance", "sphere_radius_factor",
               "sphere_points", "seed"}
    _require_keys(block, allowed, "noising")
    kwargs = {}
    if "upsample_n" in block:
        kwargs["upsample_n"] = int(_get_num(block, "upsample_n", "noising", lo=1))
    if block.get("upsample_std") is not None:
        kwargs["upsample_std"] = float(_get_num(block, "upsample_std", "noising", lo=0))
    if block.get("depth_tolerance") is not None:
        kwargs["depth_tolerance"] = float(_get_num(block, "depth_tolerance", "noising", lo=1e-12))
    if "sphere_radius_factor" in block:
        kwargs["sphere_radius_factor"] = float(
            _get_num(block, "sphere_radius_factor", "noising", lo=1.0)
        )
    if block.get("sphere_points") is not None:
        kwargs["sphere_points"] = int(_get_num(block, "sphere_points", "noising", lo=1))
    if "seed" in block:
        kwargs["seed"] = int(_get_num(block, "seed", "noising"))
    try:
        return NoisingParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"noising: {exc}") from exc


def load_config(path: str | os.PathLike, seed_override: int | None = None,
                out_override: str | None = None) -> RunConfig:
    """Parse and validate a YAML run config."""
    path = Path(path)
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _require_keys(raw, {"scene", "camera", "noising", "schedule", "optimizer",
                        "output_dir", "seed"}, "config root")

    scene_block = raw.get("scene", {})
    if not isinstance(scene_block, dict):
        raise ConfigError("key 'scene' must be a mapping")
    _require_keys(scene_block, {"source"}, "scene")
    source = scene_block.get("source", "sphere")
    if source not in _BUILTIN_SCENES:
        ply_path = (path.parent / source).resolve()
        if not ply_path.exists():
            raise ConfigError(f"key 'source' in scene: path does not exist: {source}")

    camera = _parse_camera(raw.get("camera", {}) or {})
    noising = _parse_noising(raw.get("noising", {}) or {})

    sched_block = raw.get("schedule", {}) or {}
    _require_keys(sched_block, {"sigma_min", "sigma_max", "steps"}, "schedule")
    sigma_min = float(_get_num(sched_block, "sigma_min", "schedule", lo=1e-9, default=0.1))
    sigma_max = float(_get_num(sched_block, "sigma_max", "schedule", lo=sigma_min, default=2.0))
    steps = int(_get_num(sched_block, "steps", "schedule", lo=1, default=50))
    schedule = NoiseSchedule.log_uniform(sigma_min, sigma_max, steps)
    sched_dict = {"sigma_min": sigma_min, "sigma_max": sigma_max, "steps": steps}

    opt_block = raw.get("optimizer", {}) or {}
    _require_keys(opt_block, {"iterations", "learning_rate", "lambda_sim", "strategy",
                              "loss_threshold"}, "optimizer")
    strategy = opt_block.get("strategy", "consistent")
    if strategy not in ("consistent", "iid", "zero"):
        raise ConfigError("key 'strategy' in optimizer must be consistent, iid, or zero")
    optimizer = OptimizerConfig(
        iterations=int(_get_num(opt_block, "iterations", "optimizer", lo=0, default=100)),
        learning_rate=float(_get_num(opt_block, "learning_rate", "optimizer", lo=0, default=0.4)),
        lambda_sim=float(_get_num(opt_block, "lambda_sim", "optimizer", lo=0, default=1.0)),
        strategy=strategy,
        loss_threshold=float(
            _get_num(opt_block, "loss_threshold", "optimizer", lo=0, default=0.05)
        ),
    )

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("key 'seed' must be an integer")
    if seed_override is not None:
        seed = seed_override
    output_dir = out_override if out_override is not None else raw.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("key 'output_dir' must be a string")

    return RunConfig(
        scene_source=source,
        camera=camera,
        noising=noising,
        schedule=schedule,
        optimizer=optimizer,
        output_dir=output_dir,
        seed=seed,
        schedule_block=sched_dict,
        base_dir=path.parent,
    )
