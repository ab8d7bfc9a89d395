"""Run configuration file (JSON) with sections for every pipeline stage.

Angles in the file are in degrees (``*_deg`` keys); everything else uses the
units of the owning module. Unknown keys are rejected, and every section is
turned into its typed config object up front so cross-field errors surface
before any work starts.
"""

import json
import math
from dataclasses import dataclass, field, fields

from .errors import ConfigError, FormatError, VersionError
from .model import ModelConfig
from .scene import Scene, TrajectoryConfig, default_scene, load_scene
from .training import TrainConfig

CONFIG_VERSION = 1

SCENE_DEFAULTS = {
    "n_structures": 8,
    "seed": 7,
    "corridor_length": 10.0,
    "fov_half_angle_deg": 45.0,
    "near_clip": 0.1,
    "far_clip": None,
    "sampling": 1024,
    "a_min": 1e-4,
}

TRAJECTORY_DEFAULTS = {
    "n_frames": 4000,
    "n_passes": 4,
    "angle_max_deg": 45.0,
    "angle_persistence": 0.98,
    "angle_step_sd_deg": 1.0,
    "seed": 1,
}

EVAL_DEFAULTS = {
    "angle_stride": 16,
    "correlation_stride": 1,
    "bins": 10,
}


def _merge(section, defaults, given):
    given = given or {}
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return {**defaults, **given}


@dataclass
class RunConfig:
    scene: dict = field(default_factory=lambda: dict(SCENE_DEFAULTS))
    trajectory: dict = field(default_factory=lambda: dict(TRAJECTORY_DEFAULTS))
    model: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))
    seed: int | None = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise VersionError(f"unsupported config version {version!r}")
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        model = d.get("model") or {}
        training = d.get("training") or {}
        for name, given, known in (
            ("model", model, ModelConfig.__dataclass_fields__),
            ("training", training, TrainConfig.__dataclass_fields__),
        ):
            if not isinstance(given, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            bad = set(given) - set(known)
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        cfg = cls(
            scene=_merge("scene", SCENE_DEFAULTS, d.get("scene")),
            trajectory=_merge("trajectory", TRAJECTORY_DEFAULTS, d.get("trajectory")),
            model=dict(model),
            training=dict(training),
            eval=_merge("eval", EVAL_DEFAULTS, d.get("eval")),
            seed=d.get("seed"),
        )
        cfg.validate()
        return cfg

    def to_dict(self):
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "scene": self.scene,
            "trajectory": self.trajectory,
            "model": self.model,
            "training": self.training,
            "eval": self.eval,
        }

    def validate(self, n_classes=None):
        """Build every typed config once; raises :class:`ConfigError` on problems."""
        try:
            self.build_scene()
            self.trajectory_config()
            self.model_config(n_classes or self.model.get("n_classes", self.scene["n_structures"]))
            self.train_config()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("angle_stride", "correlation_stride", "bins"):
            if int(self.eval[key]) < 1:
                raise ConfigError(f"eval.{key} must be >= 1")

    def build_scene(self):
        sc = self.scene
        kwargs = {
            "fov_half_angle": math.radians(sc["fov_half_angle_deg"]),
            "near_clip": sc["near_clip"],
            "sampling": sc["sampling"],
            "a_min": sc["a_min"],
        }
        if sc["far_clip"] is not None:
            kwargs["far_clip"] = sc["far_clip"]
        return default_scene(sc["n_structures"], sc["seed"], sc["corridor_length"], **kwargs)

    def trajectory_config(self, **overrides):
        t = {**self.trajectory, **{k: v for k, v in overrides.items() if v is not None}}
        return TrajectoryConfig(
            n_frames=int(t["n_frames"]),
            n_passes=int(t["n_passes"]),
            angle_max=math.radians(t["angle_max_deg"]),
            angle_persistence=float(t["angle_persistence"]),
            angle_step_sd=math.radians(t["angle_step_sd_deg"]),
            seed=int(t["seed"]),
        )

    def model_config(self, n_classes, **overrides):
        d = {**self.model, **{k: v for k, v in overrides.items() if v is not None}}
        d["n_classes"] = n_classes
        if self.seed is not None:
            d.setdefault("seed", self.seed)
        return ModelConfig.from_dict(d)

    def train_config(self, **overrides):
        d = {**self.training, **{k: v for k, v in overrides.items() if v is not None}}
        if self.seed is not None:
            d.setdefault("seed", self.seed)
        return TrainConfig.from_dict(d)


def load_run_config(path=None):
    if path is None:
        return RunConfig.from_dict({})
    with open(path) as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(str(exc), path, exc.lineno) from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(d)


def scene_from_args(cfg, scene_path=None) -> Scene:
    return load_scene(scene_path) if scene_path else cfg.build_scene()
