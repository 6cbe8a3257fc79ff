"""Run configuration: one YAML file with a section per module.

Precedence is flag > file > default. Unknown sections or keys are errors,
and every section is checked by its owning module before a run starts.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..channel import RadioConfig
from ..env import EnvConfig, RewardScale
from ..ledger import LedgerConfig, SimConfig
from ..ppo import MLPShape, PPOHyperparams
from ..scene import Scene, SceneError, Vec3, generate_urban_grid, load_scene, validate_scene


class ConfigError(ValueError):
    pass


@dataclass
class SceneSection:
    file: str | None = None
    rows: int = 3
    cols: int = 4
    building_footprint: float = 30.0
    street_width: float = 20.0
    height_range: tuple[float, float] = (20.0, 60.0)
    n_receivers: int = 3
    seed: int = 42
    reflectance: float = 0.6
    ground_reflectance: float = 0.6
    uav_altitude: float = 40.0
    min_altitude: float = 10.0
    max_altitude: float = 120.0


@dataclass
class EnvSection:
    step_size: float = 5.0
    episode_length: int = 50
    reward_scale: str = "db_sum"
    start_jitter: float = 0.0
    interferers: tuple[tuple[float, float, float], ...] = ()


@dataclass
class PPOSection:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    update_epochs: int = 4
    minibatch_size: int = 64
    value_loss_coeff: float = 0.5
    entropy_coeff: float = 0.01
    episodes: int = 300
    reward_normalization: bool = True
    bootstrap_time_limit: bool = True
    hidden_layers: int = 2
    width: int = 64


@dataclass
class LedgerSection:
    n_tasks: int = 100
    n_nodes: int = 5
    n_validators: int = 4
    fault_rate: float = 0.0
    n_requesters: int = 10
    requester_balance: int = 100_000
    node_stake: int = 1_000
    node_capacity: int = 2
    payment: int = 50
    gas_limit: int = 500
    positions_per_task: int = 10
    submissions_per_round: int = 10
    gas_price: int = 1
    gas_base: int = 100
    gas_per_eval: int = 1
    slash_fraction: float = 0.1
    finality_depth: int = 1


@dataclass
class OutputSection:
    dir: str = "out"
    plots: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneSection = field(default_factory=SceneSection)
    radio: RadioConfig = field(default_factory=RadioConfig)
    env: EnvSection = field(default_factory=EnvSection)
    ppo: PPOSection = field(default_factory=PPOSection)
    ledger: LedgerSection = field(default_factory=LedgerSection)
    output: OutputSection = field(default_factory=OutputSection)

    # -- builders ---------------------------------------------------------

    def build_scene(self) -> Scene:
        s = self.scene
        try:
            if s.file is not None:
                return load_scene(s.file)
            return generate_urban_grid(
                s.rows, s.cols, s.building_footprint, s.street_width, tuple(s.height_range),
                s.n_receivers, s.seed, reflectance=s.reflectance, ground_reflectance=s.ground_reflectance,
                uav_altitude=s.uav_altitude, min_altitude=s.min_altitude, max_altitude=s.max_altitude,
            )
        except (SceneError, OSError) as exc:
            raise ConfigError(f"scene: {exc}") from None

    def build_env(self, scene: Scene | None = None) -> EnvConfig:
        e = self.env
        return EnvConfig(
            scene if scene is not None else self.build_scene(),
            self.radio,
            e.step_size,
            e.episode_length,
            RewardScale(e.reward_scale),
            e.start_jitter,
            tuple(Vec3(*map(float, p)) for p in e.interferers),
        )

    def hyperparams(self) -> PPOHyperparams:
        names = {f.name for f in dataclasses.fields(PPOHyperparams)}
        kw = {k: v for k, v in dataclasses.asdict(self.ppo).items() if k in names}
        return PPOHyperparams(seed=self.seed, **kw)

    def shape(self) -> MLPShape:
        return MLPShape(hidden_layers=self.ppo.hidden_layers, width=self.ppo.width)

    def sim_config(self) -> SimConfig:
        names = {f.name for f in dataclasses.fields(SimConfig)}
        return SimConfig(**{k: v for k, v in dataclasses.asdict(self.ledger).items() if k in names})

    def ledger_config(self) -> LedgerConfig:
        names = {f.name for f in dataclasses.fields(LedgerConfig)}
        return LedgerConfig(**{k: v for k, v in dataclasses.asdict(self.ledger).items() if k in names})

    # -- validation -------------------------------------------------------

    def problems(self) -> list[str]:
        out: list[str] = []
        if not isinstance(self.seed, int) or self.seed < 0 or self.seed >= 2**64:
            out.append(f"seed must be an integer in [0, 2^64), got {self.seed!r}")
        s = self.scene
        lo, hi = s.height_range
        if not 0 < lo <= hi:
            out.append(f"scene.height_range must satisfy 0 < min <= max, got {list(s.height_range)}")
        if s.rows < 1 or s.cols < 1:
            out.append(f"scene.rows and scene.cols must be >= 1, got {s.rows}x{s.cols}")
        if s.n_receivers < 1:
            out.append(f"scene.n_receivers must be >= 1, got {s.n_receivers}")
        if not 0 <= s.min_altitude <= s.uav_altitude <= s.max_altitude:
            out.append("scene altitudes must satisfy 0 <= min_altitude <= uav_altitude <= max_altitude")
        for name in ("reflectance", "ground_reflectance"):
            if not 0.0 <= getattr(s, name) <= 1.0:
                out.append(f"scene.{name} must be in [0, 1], got {getattr(s, name)}")
        out += [f"radio: {p}" for p in self.radio.problems()]
        try:
            RewardScale(self.env.reward_scale)
        except ValueError:
            out.append(f"env.reward_scale must be one of db_sum, linear_sum, got {self.env.reward_scale!r}")
        if not self.env.step_size > 0:
            out.append(f"env.step_size must be > 0, got {self.env.step_size}")
        if self.env.episode_length < 1:
            out.append(f"env.episode_length must be >= 1, got {self.env.episode_length}")
        if self.env.start_jitter < 0:
            out.append(f"env.start_jitter must be >= 0, got {self.env.start_jitter}")
        if self.seed >= 0:
            out += self.hyperparams().problems()
        out += self.shape().problems()
        out += self.sim_config().problems() + self.ledger_config().problems()
        return out

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        if self.scene.file is not None:
            scene_problems = validate_scene(self.build_scene())
            if scene_problems:
                raise ConfigError("; ".join(f"scene: {p}" for p in scene_problems))
        return self


_SECTIONS = {
    "scene": SceneSection,
    "radio": RadioConfig,
    "env": EnvSection,
    "ppo": PPOSection,
    "ledger": LedgerSection,
    "output": OutputSection,
}


def _coerce(where: str, value: Any, default: Any) -> Any:
    """Check a file value against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 resolves "1e-5" (no dot) to a string.
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if value is not None and default is not None and not isinstance(value, type(default)):
        raise ConfigError(f"{where} must be a {type(default).__name__}, got {value!r}")
    return value


def _section(name: str, cls, values: Any, base):
    if values is None:
        return base
    if not isinstance(values, dict):
        raise ConfigError(f"section {name} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name}: {', '.join(unknown)}")
    kw = {k: _coerce(f"{name}.{k}", v, getattr(base, k)) for k, v in values.items()}
    return dataclasses.replace(base, **kw)


def from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping of sections")
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    changes: dict[str, Any] = {}
    if "seed" in data:
        changes["seed"] = _coerce("seed", data["seed"], 0)
    for name, cls in _SECTIONS.items():
        if name in data:
            changes[name] = _section(name, cls, data[name], getattr(cfg, name))
    return dataclasses.replace(cfg, **changes)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return from_dict(data or {})


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` flags; values are parsed as YAML scalars."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        section, dot, name = key.partition(".")
        value = yaml.safe_load(raw)
        if not dot:
            cfg = from_dict({section: value}, cfg)
        else:
            cfg = from_dict({section: {name: value}}, cfg)
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    out: dict[str, Any] = {"seed": cfg.seed}
    for name in _SECTIONS:
        out[name] = {k: plain(v) for k, v in dataclasses.asdict(getattr(cfg, name)).items()}
    return out
