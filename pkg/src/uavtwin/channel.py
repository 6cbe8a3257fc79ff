"""First-order image-method tracer and link budget.

Paths are line of sight plus single specular bounces off the ground and
building walls. Power follows free-space spreading over the unfolded path
length, scaled by the squared amplitude reflectance of the bounce face.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import Face, Scene, Vec3, segments_occluded

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23
NEAR_FIELD_GUARD = 0.01

LOS = "LOS"
REFLECTED = "REFLECTED"


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class RadioConfig:
    carrier_frequency: float = 2.4e9
    bandwidth: float = 20e6
    tx_power: float = 1.0
    noise_figure: float = 7.0
    reference_temperature: float = 290.0
    max_reflection_order: int = 1
    sinr_floor_db: float = -40.0
    sinr_ceiling_db: float = 60.0
    coherent: bool = False

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    def problems(self) -> list[str]:
        out = []
        for name in ("carrier_frequency", "bandwidth", "tx_power", "reference_temperature"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"radio.{name} must be > 0, got {v}")
        if not self.noise_figure >= 0:
            out.append(f"radio.noise_figure must be >= 0, got {self.noise_figure}")
        if self.max_reflection_order != 1:
            out.append(f"radio.max_reflection_order must be 1, got {self.max_reflection_order}")
        if not self.sinr_floor_db < self.sinr_ceiling_db:
            out.append(
                f"radio.sinr_floor_db ({self.sinr_floor_db}) must be below "
                f"sinr_ceiling_db ({self.sinr_ceiling_db})"
            )
        return out

    def validate(self) -> "RadioConfig":
        problems = self.problems()
        if problems:
            raise ChannelError("; ".join(problems))
        return self


@dataclass(frozen=True)
class PropagationPath:
    kind: str
    face: int | None
    length: float
    delay: float
    power_gain: float
    phase: float


@dataclass(frozen=True)
class ChannelImpulseResponse:
    paths: tuple[PropagationPath, ...]
    tx_pos: Vec3
    rx_pos: Vec3
    candidates: int

    @property
    def n_paths(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class LinkReport:
    receiver: int
    received_power: float
    sinr_linear: float
    sinr_db: float
    capacity: float


def reflection_point(face: Face, tx: Sequence[float], rx: Sequence[float]) -> Vec3 | None:
    """Specular point on ``face`` for tx -> face -> rx, or None.

    The source is mirrored across the face plane and the image-to-receiver
    line is intersected with the plane.
    """
    a, o = face.axis, face.offset
    st = tx[a] - o
    sr = rx[a] - o
    if st * sr <= 0.0:
        return None
    t = st / (st + sr)
    image = list(tx)
    image[a] = 2.0 * o - tx[a]
    pt = [image[i] + t * (rx[i] - image[i]) for i in range(3)]
    pt[a] = o
    if not face.contains(pt):
        return None
    return Vec3(*pt)


def _path_gain(length: np.ndarray, reflectance: np.ndarray, wavelength: float) -> np.ndarray:
    return (wavelength / (4.0 * math.pi * length)) ** 2 * reflectance**2


def _phase(length: np.ndarray, wavelength: float) -> np.ndarray:
    return np.mod(-2.0 * math.pi * length / wavelength, 2.0 * math.pi)


def trace_paths(scene: Scene, tx: Sequence[float], rx: Sequence[float], radio: RadioConfig) -> ChannelImpulseResponse:
    txa = np.asarray(tx, dtype=float)
    rxa = np.asarray(rx, dtype=float)
    dist = float(np.linalg.norm(rxa - txa))
    if dist < NEAR_FIELD_GUARD:
        raise ChannelError(f"tx-rx distance {dist:.3g} m below near-field guard {NEAR_FIELD_GUARD} m")

    fa = scene.face_arrays
    axis, off = fa["axis"], fa["offset"]
    n_faces = axis.shape[0]
    rows = np.arange(n_faces)

    st = txa[axis] - off
    sr = rxa[axis] - off
    valid = (st * sr > 0.0) & (fa["reflectance"] > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(valid, st / (st + sr), 0.0)
    image = np.broadcast_to(txa, (n_faces, 3)).copy()
    image[rows, axis] = 2.0 * off - txa[axis]
    point = image + t[:, None] * (rxa - image)
    point[rows, axis] = off
    inp = np.array([[1, 2], [0, 2], [0, 1]])[axis]
    coords = np.take_along_axis(point, inp, axis=1)
    valid &= np.all((coords >= fa["lo"]) & (coords <= fa["hi"]), axis=1)

    cand = np.flatnonzero(valid)
    k = cand.shape[0]
    starts = np.empty((1 + 2 * k, 3))
    ends = np.empty((1 + 2 * k, 3))
    excl = np.full(1 + 2 * k, -1, dtype=int)
    starts[0], ends[0] = txa, rxa
    starts[1 : 1 + k], ends[1 : 1 + k] = txa, point[cand]
    starts[1 + k :], ends[1 + k :] = point[cand], rxa
    excl[1:] = np.concatenate([cand, cand])
    blocked = segments_occluded(scene, starts, ends, excl)

    lam = radio.wavelength
    entries: list[tuple[float, int, str, int | None]] = []
    if not blocked[0]:
        entries.append((dist, -1, LOS, None))
    ok = ~(blocked[1 : 1 + k] | blocked[1 + k :])
    refl_len = np.linalg.norm(rxa - image[cand], axis=1)
    for j in np.flatnonzero(ok):
        f = int(cand[j])
        entries.append((float(refl_len[j]), f, REFLECTED, f))
    entries.sort(key=lambda e: (e[0], e[1]))

    paths = []
    if entries:
        lengths = np.array([e[0] for e in entries])
        gammas = np.array([1.0 if e[3] is None else fa["reflectance"][e[3]] for e in entries])
        gains = _path_gain(lengths, gammas, lam)
        phases = _phase(lengths, lam)
        for e, g, ph in zip(entries, gains, phases):
            paths.append(PropagationPath(e[2], e[3], e[0], e[0] / SPEED_OF_LIGHT, float(g), float(ph)))
    return ChannelImpulseResponse(tuple(paths), Vec3(*tx), Vec3(*rx), 1 + n_faces)


def received_power(cir: ChannelImpulseResponse, radio: RadioConfig) -> float:
    if not cir.paths:
        return 0.0
    gains = np.array([p.power_gain for p in cir.paths])
    if radio.coherent:
        phases = np.array([p.phase for p in cir.paths])
        field = np.sum(np.sqrt(gains) * np.exp(1j * phases))
        return float(radio.tx_power * abs(field) ** 2)
    return float(radio.tx_power * gains.sum())


def noise_power(radio: RadioConfig) -> float:
    return BOLTZMANN * radio.reference_temperature * radio.bandwidth * 10.0 ** (radio.noise_figure / 10.0)


def sinr_to_db(sinr_linear: float, radio: RadioConfig) -> float:
    if sinr_linear <= 0.0:
        return radio.sinr_floor_db
    return min(max(10.0 * math.log10(sinr_linear), radio.sinr_floor_db), radio.sinr_ceiling_db)


def capacity(sinr_linear: float, radio: RadioConfig) -> float:
    # log1p keeps tiny SINRs from rounding to exactly zero capacity.
    return radio.bandwidth * math.log1p(sinr_linear) / math.log(2.0)


def make_report(receiver: int, signal: float, interference: float, radio: RadioConfig) -> LinkReport:
    sinr = signal / (noise_power(radio) + interference)
    return LinkReport(receiver, signal, sinr, sinr_to_db(sinr, radio), capacity(sinr, radio))


def link_report(
    scene: Scene,
    uav_pos: Sequence[float],
    receiver_index: int,
    interferers: Sequence[Sequence[float]] = (),
    radio: RadioConfig = RadioConfig(),
) -> LinkReport:
    if not 0 <= receiver_index < scene.n_receivers:
        raise ChannelError(f"receiver_index {receiver_index} out of range for {scene.n_receivers} receivers")
    rx = scene.receivers[receiver_index]
    signal = received_power(trace_paths(scene, uav_pos, rx, radio), radio)
    interference = sum(received_power(trace_paths(scene, src, rx, radio), radio) for src in interferers)
    return make_report(receiver_index, signal, interference, radio)
