"""Empirical scaling of the training cost model.

Runs short trainings while varying one of episodes (E), episode length (T),
receiver count (R) or hidden width (W), and fits the log-log slope of the
counter that term should drive.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .env import EnvConfig
from .ppo import MLPShape, PPOHyperparams, train
from .probe import ComplexityProbe
from .scene import Scene

VARIABLES = ("E", "T", "R", "W")
DOMINANT = {"E": "candidate_paths", "T": "candidate_paths", "R": "candidate_paths", "W": "macs"}


@dataclass(frozen=True)
class ProbePoint:
    value: int
    counters: dict


@dataclass(frozen=True)
class ScalingReport:
    variable: str
    counter: str
    points: tuple[ProbePoint, ...]
    slope: float


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def predicted_candidate_paths(scene: Scene, episodes: int, episode_length: int) -> int:
    """Closed form of the candidate-path counter: one LOS and one per face,
    for every receiver, at every step."""
    return episodes * episode_length * scene.n_receivers * (1 + len(scene.faces))


def predicted_macs(shape: MLPShape, hyper: PPOHyperparams, episodes: int, episode_length: int) -> int:
    """Closed form of the MAC counter: a forward pass per step plus forward and
    backward passes per sample per update epoch."""
    per_episode = episode_length * shape.forward_macs()
    per_episode += hyper.update_epochs * episode_length * (shape.forward_macs() + shape.backward_macs())
    return episodes * per_episode


def run_probe(
    variable: str,
    values: Sequence[int],
    env_for: Callable[[int | None], EnvConfig],
    hyper: PPOHyperparams,
    shape: MLPShape,
) -> ScalingReport:
    """``env_for(r)`` builds the environment with ``r`` receivers (``None`` keeps
    the configured count)."""
    if variable not in VARIABLES:
        raise ValueError(f"probe variable must be one of {', '.join(VARIABLES)}, got {variable!r}")
    if len(values) < 3:
        raise ValueError(f"probe needs at least 3 sample values, got {len(values)}")
    if any(v < 1 for v in values):
        raise ValueError(f"probe values must be >= 1, got {list(values)}")
    points = []
    for v in values:
        env = env_for(v if variable == "R" else None)
        if variable == "T":
            env = dataclasses.replace(env, episode_length=v)
        h = dataclasses.replace(hyper, episodes=v) if variable == "E" else hyper
        s = dataclasses.replace(shape, width=v) if variable == "W" else shape
        probe = ComplexityProbe()
        train(env, h, s, probe=probe)
        points.append(ProbePoint(v, probe.as_dict()))
    counter = DOMINANT[variable]
    slope = loglog_slope([p.value for p in points], [p.counters[counter] for p in points])
    return ScalingReport(variable, counter, tuple(points), slope)
