"""UAV positioning environment: discrete axis moves, summed-SINR reward."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Sequence

import numpy as np

from .channel import LinkReport, RadioConfig, make_report, received_power, trace_paths
from .scene import Scene, Vec3, validate_scene


class EnvError(ValueError):
    pass


class Action(IntEnum):
    """Stable action encoding: index 2k moves +axis k, 2k+1 moves -axis k."""

    PLUS_X = 0
    MINUS_X = 1
    PLUS_Y = 2
    MINUS_Y = 3
    PLUS_Z = 4
    MINUS_Z = 5


N_ACTIONS = len(Action)


class RewardScale(str, Enum):
    DB_SUM = "db_sum"
    LINEAR_SUM = "linear_sum"


@dataclass(eq=False)
class EnvConfig:
    scene: Scene
    radio: RadioConfig = field(default_factory=RadioConfig)
    step_size: float = 5.0
    episode_length: int = 50
    reward_scale: RewardScale = RewardScale.DB_SUM
    start_jitter: float = 0.0
    interferers: tuple[Vec3, ...] = ()
    # Memo of evaluate_position results keyed by exact position; evaluation is
    # pure so this only trades memory for time.
    _memo: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.reward_scale = RewardScale(self.reward_scale)

    def problems(self) -> list[str]:
        out = list(validate_scene(self.scene)) + self.radio.problems()
        if not (math.isfinite(self.step_size) and self.step_size > 0):
            out.append(f"env.step_size must be > 0, got {self.step_size}")
        if self.episode_length < 1:
            out.append(f"env.episode_length must be >= 1, got {self.episode_length}")
        if self.start_jitter < 0:
            out.append(f"env.start_jitter must be >= 0, got {self.start_jitter}")
        return out

    def validate(self) -> "EnvConfig":
        problems = self.problems()
        if problems:
            raise EnvError("; ".join(problems))
        return self


@dataclass(frozen=True)
class EnvState:
    uav_pos: Vec3
    step_index: int = 0


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    reports: tuple[LinkReport, ...]


def clamp(pos: Sequence[float], scene: Scene) -> Vec3:
    lo, hi = scene.bounds.min, scene.bounds.max
    return Vec3(*(min(max(pos[i], lo[i]), hi[i]) for i in range(3)))


def reset(config: EnvConfig, rng: np.random.Generator | None = None) -> EnvState:
    """Start state. With ``start_jitter > 0`` and an rng, the start is offset
    uniformly per axis by up to the jitter and clamped into bounds."""
    start = config.scene.uav_start
    if config.start_jitter > 0 and rng is not None:
        offset = rng.uniform(-config.start_jitter, config.start_jitter, size=3)
        start = clamp(start + tuple(float(v) for v in offset), config.scene)
    return EnvState(start, 0)


def action_to_delta(action: int, step_size: float) -> Vec3:
    a = Action(action)
    axis, sign = divmod(int(a), 2)
    delta = [0.0, 0.0, 0.0]
    delta[axis] = -step_size if sign else step_size
    return Vec3(*delta)


def observe(config: EnvConfig, state: EnvState) -> np.ndarray:
    """Position scaled to [-1, 1] per axis by the scene bounds."""
    lo = np.asarray(config.scene.bounds.min)
    hi = np.asarray(config.scene.bounds.max)
    return 2.0 * (np.asarray(state.uav_pos) - lo) / (hi - lo) - 1.0


def _reward(reports: Sequence[LinkReport], scale: RewardScale) -> float:
    if scale is RewardScale.DB_SUM:
        return float(math.fsum(r.sinr_db for r in reports))
    return float(math.fsum(r.sinr_linear for r in reports))


def evaluate_position(config: EnvConfig, pos: Sequence[float]) -> tuple[float, tuple[LinkReport, ...]]:
    key = (float(pos[0]), float(pos[1]), float(pos[2]))
    hit = config._memo.get(key)
    if hit is not None:
        return hit
    scene = config.scene
    if not scene.bounds.contains(key):
        raise EnvError(f"position {key} outside scene bounds {tuple(scene.bounds.min)}..{tuple(scene.bounds.max)}")
    radio = config.radio
    reports = []
    for i, rx in enumerate(scene.receivers):
        signal = received_power(trace_paths(scene, key, rx, radio), radio)
        interference = math.fsum(
            received_power(trace_paths(scene, src, rx, radio), radio) for src in config.interferers
        )
        reports.append(make_report(i, signal, interference, radio))
    result = (_reward(reports, config.reward_scale), tuple(reports))
    config._memo[key] = result
    return result


def step(config: EnvConfig, state: EnvState, action: int) -> StepResult:
    if state.step_index >= config.episode_length:
        raise EnvError(
            f"episode finished: step_index {state.step_index} reached episode_length {config.episode_length}"
        )
    pos = clamp(state.uav_pos + action_to_delta(action, config.step_size), config.scene)
    reward, reports = evaluate_position(config, pos)
    nxt = EnvState(pos, state.step_index + 1)
    return StepResult(nxt, reward, nxt.step_index == config.episode_length, reports)
