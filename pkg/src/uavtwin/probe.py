"""Operation counters for checking the training cost model empirically."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field


@dataclass
class ComplexityProbe:
    """Loop counters, not timings: each one is an exact count of work items.

    ``candidate_paths`` counts ray-trace path candidates (one LOS plus one per
    reflecting face, per receiver, per step). ``macs`` counts multiply-adds in
    the MLP, both for action selection and for policy updates.
    ``transitions`` counts stored transitions and ``transition_values`` the
    scalars they hold (T * D per episode).
    """

    candidate_paths: int = 0
    macs: int = 0
    steps: int = 0
    episodes: int = 0
    transitions: int = 0
    transition_values: int = 0
    peak_buffer_values: int = 0
    wall: dict[str, float] = field(default_factory=dict)

    def reset(self) -> None:
        self.candidate_paths = self.macs = self.steps = self.episodes = 0
        self.transitions = self.transition_values = self.peak_buffer_values = 0
        self.wall.clear()

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.wall[name] = self.wall.get(name, 0.0) + time.perf_counter() - t0

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in (
            "candidate_paths", "macs", "steps", "episodes",
            "transitions", "transition_values", "peak_buffer_values",
        )}
        out.update({f"wall_{k}": v for k, v in sorted(self.wall.items())})
        return out
