"""Brute-force lattice search over the flight volume."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .env import EnvConfig, evaluate_position
from .channel import LinkReport
from .scene import Box, Vec3


def axis_points(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` evenly spaced points spanning [lo, hi]; a single point sits at the midpoint."""
    if n < 1:
        raise ValueError(f"lattice dimension must be >= 1, got {n}")
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, n)


def lattice(bounds: Box, nx: int, ny: int, nz: int) -> Iterator[tuple[int, int, int, Vec3]]:
    """Lattice points in linear-index order ``(ix * ny + iy) * nz + iz``."""
    xs = axis_points(bounds.min.x, bounds.max.x, nx)
    ys = axis_points(bounds.min.y, bounds.max.y, ny)
    zs = axis_points(bounds.min.z, bounds.max.z, nz)
    for ix, x in enumerate(xs):
        for iy, y in enumerate(ys):
            for iz, z in enumerate(zs):
                yield ix, iy, iz, Vec3(float(x), float(y), float(z))


@dataclass(frozen=True)
class SweepRow:
    ix: int
    iy: int
    iz: int
    position: Vec3
    reward: float
    reports: tuple[LinkReport, ...]


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    best_index: int

    @property
    def best(self) -> SweepRow:
        return self.rows[self.best_index]


def sweep(config: EnvConfig, nx: int, ny: int, nz: int) -> SweepResult:
    """Evaluate every lattice point; the argmax is the lowest linear index among ties."""
    rows = []
    best_index = 0
    for ix, iy, iz, p in lattice(config.scene.bounds, nx, ny, nz):
        reward, reports = evaluate_position(config, p)
        rows.append(SweepRow(ix, iy, iz, p, reward, reports))
        if reward > rows[best_index].reward:
            best_index = len(rows) - 1
    return SweepResult(tuple(rows), best_index)
