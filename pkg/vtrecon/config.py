"""Pipeline configuration.

A TOML file with optional sections; every key has a default.

    [sensor]    tactile sensor geometry
    [hand]      joint limit and fingertip-to-sensor offset
    [grid]      winding number / feature grid and evaluation grid
    [sampling]  input cloud size and training query sampling
    [training]  optimizer and schedule
    [dataset]   split sizes and rendering
    [[scenes]]  scene list (kind or path, plus SceneSpec keys)

The file is taken from --config, then $WNF_RECON_CONFIG; with neither the
built-in defaults are used.
"""

import os
from typing import List

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import datagen
import hand
from datagen import DatagenSettings, SceneSpec
from geometry import RigidTransform, VoxelGrid
from hand import HandModel
from network import Architecture, EncoderKind, Fusion
from tactile import TactileSensorSpec

ENV_VAR = "WNF_RECON_CONFIG"

VARIANTS = ("vision-only", "vtaco", "vtacoh")
TARGETS = ("deformed", "undeformed")


class ConfigError(Exception):
    def __init__(self, key: str, value):
        self.key = key
        self.value = value

    def __str__(self):
        return "Invalid configuration value for %s: %r" % (
            self.key, self.value)


class Section:
    """Plain attribute holder whose defaults are the class DEFAULTS."""

    NAME = ""
    DEFAULTS = {}
    POSITIVE = ()

    def __init__(self, **values):
        for key, value in values.items():
            if key not in self.DEFAULTS:
                raise ConfigError("%s.%s" % (self.NAME, key), value)
        merged = dict(self.DEFAULTS)
        merged.update(values)
        for key in self.POSITIVE:
            value = merged[key]
            if isinstance(value, bool) or not isinstance(
                    value, (int, float)) or not value > 0:
                raise ConfigError("%s.%s" % (self.NAME, key), value)
        self.__dict__.update(merged)

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, ", ".join(
            "%s=%r" % (k, getattr(self, k)) for k in self.DEFAULTS))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.DEFAULTS}


class SensorConfig(Section):
    NAME = "sensor"
    DEFAULTS = TactileSensorSpec().to_dict()
    POSITIVE = ("width", "height", "gel_width", "gel_height", "rest_depth",
                "max_indentation")

    def spec(self) -> TactileSensorSpec:
        try:
            return TactileSensorSpec.from_dict(self.to_dict())
        except ValueError as e:
            raise ConfigError(self.NAME, str(e)) from None


class HandConfig(Section):
    NAME = "hand"
    DEFAULTS = {
        "joint_limit": hand.DEFAULT_JOINT_LIMIT,
        "tip_to_sensor": list(hand.DEFAULT_TIP_TO_SENSOR),
    }
    POSITIVE = ("joint_limit",)

    def model(self) -> HandModel:
        if len(self.tip_to_sensor) != 3:
            raise ConfigError("hand.tip_to_sensor", self.tip_to_sensor)
        try:
            return HandModel(
                tip_to_sensor=RigidTransform.from_translation(
                    self.tip_to_sensor),
                joint_limit=self.joint_limit)
        except ValueError:
            raise ConfigError("hand.joint_limit", self.joint_limit) from None


class GridConfig(Section):
    NAME = "grid"
    DEFAULTS = {
        "origin": -0.6,
        "size": 1.2,
        "resolution": 32,
        "eval_resolution": 64,
        "plane_resolution": 32,
    }
    POSITIVE = ("size", "resolution", "eval_resolution", "plane_resolution")

    def grid(self, resolution: int = None) -> VoxelGrid:
        return VoxelGrid.cube(
            (self.origin,) * 3, self.size, resolution or self.resolution)

    def eval_grid(self) -> VoxelGrid:
        return self.grid(self.eval_resolution)


class SamplingConfig(Section):
    NAME = "sampling"
    DEFAULTS = {
        "num_points": 3000,
        "pool": 100000,
        "surface": 20000,
        "queries": 2048,
        "radius": hand.DEFAULT_QUERY_RADIUS,
        "eval_points": 2048,
    }
    POSITIVE = ("num_points", "pool", "queries", "radius", "eval_points")

    def __init__(self, **values):
        super(SamplingConfig, self).__init__(**values)
        if not 0 <= self.surface <= self.pool:
            raise ConfigError("sampling.surface", self.surface)


class TrainingConfig(Section):
    NAME = "training"
    DEFAULTS = {
        "lr": 2e-4,
        "batch_size": 6,
        "steps": 2000,
        "seed": 0,
        "fusion": Fusion.ADDITION.value,
        "encoder": EncoderKind.VOLUME.value,
        "d_p": 32,
        "d_t": 32,
        "variant": "vtaco",
        "target": "deformed",
        "category": "",
        "log_every": 50,
    }
    POSITIVE = ("batch_size", "d_p", "d_t", "log_every")

    def __init__(self, **values):
        super(TrainingConfig, self).__init__(**values)
        if not isinstance(self.lr, (int, float)) or self.lr < 0:
            raise ConfigError("training.lr", self.lr)
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ConfigError("training.steps", self.steps)
        if self.fusion not in [f.value for f in Fusion]:
            raise ConfigError("training.fusion", self.fusion)
        if self.encoder not in [e.value for e in EncoderKind]:
            raise ConfigError("training.encoder", self.encoder)
        if self.variant not in VARIANTS:
            raise ConfigError("training.variant", self.variant)
        if self.target not in TARGETS:
            raise ConfigError("training.target", self.target)


class DatasetConfig(Section):
    NAME = "dataset"
    DEFAULTS = {
        "train": 60,
        "test": 12,
        "val": 8,
        "image_size": 128,
        "focal": 160.0,
    }
    POSITIVE = ("image_size", "focal")

    def __init__(self, **values):
        super(DatasetConfig, self).__init__(**values)
        for key in datagen.SPLITS:
            value = getattr(self, key)
            if not isinstance(value, int) or value < 0:
                raise ConfigError("dataset.%s" % key, value)
        if self.train + self.test + self.val == 0:
            raise ConfigError("dataset", self.counts())

    def counts(self):
        return self.train, self.test, self.val


def default_scenes() -> List[SceneSpec]:
    return [
        SceneSpec("sphere"),
        SceneSpec("box"),
        SceneSpec("bottle"),
        SceneSpec("foldingrack"),
        SceneSpec("sphere", category="soft-sphere", deformable=True,
                  stiffness=0.3),
        SceneSpec("box", category="soft-box", deformable=True,
                  stiffness=0.2),
    ]


def scene_from_dict(d: dict, index: int) -> SceneSpec:
    key = "scenes[%d]" % index
    d = dict(d)
    pose = d.pop("pose", None)
    if pose is not None:
        try:
            d["pose"] = RigidTransform.from_rotvec(
                pose.get("rotvec", (0, 0, 0)),
                pose.get("translation", (0, 0, 0)))
        except (AttributeError, ValueError):
            raise ConfigError(key + ".pose", pose) from None
    try:
        return SceneSpec(**d)
    except TypeError:
        raise ConfigError(key, d) from None
    except ValueError as e:
        raise ConfigError(key, "%s (%s)" % (d, e)) from None


class Config:
    def __init__(
            self, sensor: SensorConfig = None, hand: HandConfig = None,
            grid: GridConfig = None, sampling: SamplingConfig = None,
            training: TrainingConfig = None, dataset: DatasetConfig = None,
            scenes: List[SceneSpec] = None):
        self.sensor = sensor or SensorConfig()  # type: SensorConfig
        self.hand = hand or HandConfig()  # type: HandConfig
        self.grid = grid or GridConfig()  # type: GridConfig
        self.sampling = sampling or SamplingConfig()  # type: SamplingConfig
        self.training = training or TrainingConfig()  # type: TrainingConfig
        self.dataset = dataset or DatasetConfig()  # type: DatasetConfig
        self.scenes = scenes or default_scenes()  # type: List[SceneSpec]
        # Validate the derived objects up front
        self.sensor.spec()
        self.hand.model()

    def __repr__(self):
        return "Config(%d scenes, %r)" % (len(self.scenes), self.training)

    def datagen_settings(self, threads: int = 1) -> DatagenSettings:
        return DatagenSettings(
            self.sensor.spec(), self.hand.model(), self.grid.grid(),
            self.sampling.num_points, self.dataset.image_size,
            self.dataset.focal, threads=threads)

    def architecture(self) -> Architecture:
        t = self.training
        sensor = self.sensor.spec()
        try:
            return Architecture(
                self.grid.grid(), d_p=t.d_p, d_t=t.d_t,
                tactile_shape=(sensor.height, sensor.width),
                fusion=Fusion(t.fusion), encoder=EncoderKind(t.encoder),
                plane_resolution=self.grid.plane_resolution)
        except ValueError as e:
            raise ConfigError("training", str(e)) from None


SECTIONS = {
    "sensor": SensorConfig,
    "hand": HandConfig,
    "grid": GridConfig,
    "sampling": SamplingConfig,
    "training": TrainingConfig,
    "dataset": DatasetConfig,
}


def parse_config(text: str) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("file", str(e)) from None

    sections = {}
    for name, value in raw.items():
        if name == "scenes":
            continue
        if name not in SECTIONS or not isinstance(value, dict):
            raise ConfigError(name, value)
        sections[name] = SECTIONS[name](**value)

    scenes = None
    if "scenes" in raw:
        if not isinstance(raw["scenes"], list) or not raw["scenes"]:
            raise ConfigError("scenes", raw["scenes"])
        scenes = [scene_from_dict(d, i) for i, d in enumerate(raw["scenes"])]
    return Config(scenes=scenes, **sections)


def load_config(path: str = None) -> Config:
    """Config from path, else $WNF_RECON_CONFIG, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return Config()
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    return parse_config(text)
