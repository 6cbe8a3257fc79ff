"""Urban scene geometry: axis-aligned buildings on a ground plane.

The scene is what the ray tracer queries. It is immutable after
construction; every query here is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

GROUND = -1
RECEIVER_HEIGHT = 1.5

# Absolute tolerance (meters) used when deciding whether a box contact lies on
# an excluded reflecting plane.
PLANE_TOL = 1e-7


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, other):  # type: ignore[override]
        return Vec3(self.x + other[0], self.y + other[1], self.z + other[2])

    def __sub__(self, other):
        return Vec3(self.x - other[0], self.y - other[1], self.z - other[2])

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in self)


@dataclass(frozen=True)
class Box:
    min: Vec3
    max: Vec3

    def contains(self, p: Sequence[float]) -> bool:
        return all(self.min[i] <= p[i] <= self.max[i] for i in range(3))

    @property
    def center(self) -> Vec3:
        return Vec3(*((self.min[i] + self.max[i]) / 2 for i in range(3)))


@dataclass(frozen=True)
class Building:
    min_corner: Vec3
    max_corner: Vec3
    reflectance: float = 0.6

    @property
    def box(self) -> Box:
        return Box(self.min_corner, self.max_corner)


@dataclass(frozen=True)
class Face:
    """A rectangular reflector lying in the plane ``coord[axis] == offset``.

    ``extent`` holds the two in-plane intervals, ordered by axis index.
    """

    owner: int
    axis: int
    offset: float
    extent: tuple[tuple[float, float], tuple[float, float]]
    reflectance: float

    @property
    def in_plane_axes(self) -> tuple[int, int]:
        a, b = (i for i in range(3) if i != self.axis)
        return a, b

    def contains(self, p: Sequence[float], tol: float = 0.0) -> bool:
        a, b = self.in_plane_axes
        (alo, ahi), (blo, bhi) = self.extent
        return alo - tol <= p[a] <= ahi + tol and blo - tol <= p[b] <= bhi + tol


@dataclass(frozen=True)
class Scene:
    buildings: tuple[Building, ...]
    ground_reflectance: float
    receivers: tuple[Vec3, ...]
    uav_start: Vec3
    bounds: Box

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def complexity(self) -> int:
        """Geometric work factor L: buildings plus candidate reflecting faces."""
        return len(self.buildings) + len(self.faces)

    @cached_property
    def faces(self) -> tuple[Face, ...]:
        return tuple(candidate_faces(self))

    @cached_property
    def face_arrays(self) -> dict[str, np.ndarray]:
        """Columnar view of ``faces`` for vectorized tracing."""
        fs = self.faces
        return {
            "owner": np.array([f.owner for f in fs], dtype=int),
            "axis": np.array([f.axis for f in fs], dtype=int),
            "offset": np.array([f.offset for f in fs], dtype=float),
            "lo": np.array([[f.extent[0][0], f.extent[1][0]] for f in fs], dtype=float),
            "hi": np.array([[f.extent[0][1], f.extent[1][1]] for f in fs], dtype=float),
            "reflectance": np.array([f.reflectance for f in fs], dtype=float),
        }

    @cached_property
    def box_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.buildings:
            return np.zeros((0, 3)), np.zeros((0, 3))
        lo = np.array([b.min_corner for b in self.buildings], dtype=float)
        hi = np.array([b.max_corner for b in self.buildings], dtype=float)
        return lo, hi


class SceneError(ValueError):
    pass


class SceneFormatError(SceneError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def _q(v: float) -> float:
    # Quantize to what the 9-significant-digit file format can reproduce exactly.
    return float(f"{v:.9g}")


def generate_urban_grid(
    rows: int,
    cols: int,
    building_footprint: float = 30.0,
    street_width: float = 20.0,
    height_range: tuple[float, float] = (20.0, 60.0),
    n_receivers: int = 3,
    seed: int = 42,
    *,
    reflectance: float = 0.6,
    ground_reflectance: float = 0.6,
    uav_altitude: float = 40.0,
    min_altitude: float = 10.0,
    max_altitude: float = 120.0,
    max_attempts: int = 10_000,
) -> Scene:
    """Lay out ``rows x cols`` box buildings separated by streets.

    Streets also run around the outside of the grid, so the footprint is
    ``n * building_footprint + (n + 1) * street_width`` per axis. Heights and
    receiver positions are drawn from a PCG64 generator seeded with ``seed``
    and rounded to centimeters. The UAV starts over the center at
    ``uav_altitude``, or 1 m above the roof when the center is on a building.
    """
    if rows < 1 or cols < 1:
        raise SceneError(f"rows and cols must be >= 1, got rows={rows}, cols={cols}")
    if n_receivers < 1:
        raise SceneError(f"n_receivers must be >= 1, got {n_receivers}")
    hmin, hmax = height_range
    if not (0 < hmin <= hmax):
        raise SceneError(f"height_range must satisfy 0 < min <= max, got {height_range}")
    if building_footprint <= 0 or street_width < 0:
        raise SceneError("building_footprint must be > 0 and street_width >= 0")
    if not (0 <= min_altitude <= uav_altitude <= max_altitude):
        raise SceneError("altitudes must satisfy 0 <= min_altitude <= uav_altitude <= max_altitude")

    rng = np.random.Generator(np.random.PCG64(seed))
    pitch = building_footprint + street_width
    width = _q(cols * building_footprint + (cols + 1) * street_width)
    depth = _q(rows * building_footprint + (rows + 1) * street_width)

    buildings = []
    for r in range(rows):
        for c in range(cols):
            x0 = street_width + c * pitch
            y0 = street_width + r * pitch
            h = round(float(rng.uniform(hmin, hmax)), 2)
            buildings.append(
                Building(
                    Vec3(_q(x0), _q(y0), 0.0),
                    Vec3(_q(x0 + building_footprint), _q(y0 + building_footprint), _q(h)),
                    _q(reflectance),
                )
            )

    receivers: list[Vec3] = []
    attempts = 0
    while len(receivers) < n_receivers:
        if attempts >= max_attempts:
            raise SceneError(
                f"could not place {n_receivers} receivers outside buildings "
                f"after {attempts} attempts (placed {len(receivers)})"
            )
        attempts += 1
        x = _q(round(float(rng.uniform(0.0, width)), 2))
        y = _q(round(float(rng.uniform(0.0, depth)), 2))
        p = Vec3(x, y, RECEIVER_HEIGHT)
        if any(b.box.contains(p) for b in buildings):
            continue
        receivers.append(p)

    # With an odd number of rows and columns the center sits over a building;
    # lift the start 1 m above its roof so it never begins inside a solid.
    start_z = uav_altitude
    center = Vec3(_q(width / 2), _q(depth / 2), uav_altitude)
    for b in buildings:
        if b.box.contains(center):
            start_z = min(max(uav_altitude, b.max_corner.z + 1.0), max_altitude)
    return Scene(
        buildings=tuple(buildings),
        ground_reflectance=_q(ground_reflectance),
        receivers=tuple(receivers),
        uav_start=Vec3(center.x, center.y, _q(start_z)),
        bounds=Box(Vec3(0.0, 0.0, _q(min_altitude)), Vec3(width, depth, _q(max_altitude))),
    )


def candidate_faces(scene: Scene) -> list[Face]:
    """Ground first, then the four walls of each building (-x, +x, -y, +y)."""
    b = scene.bounds
    faces = [
        Face(GROUND, 2, 0.0, ((b.min.x, b.max.x), (b.min.y, b.max.y)), scene.ground_reflectance)
    ]
    for i, bld in enumerate(scene.buildings):
        lo, hi = bld.min_corner, bld.max_corner
        z = (lo.z, hi.z)
        faces.append(Face(i, 0, lo.x, ((lo.y, hi.y), z), bld.reflectance))
        faces.append(Face(i, 0, hi.x, ((lo.y, hi.y), z), bld.reflectance))
        faces.append(Face(i, 1, lo.y, ((lo.x, hi.x), z), bld.reflectance))
        faces.append(Face(i, 1, hi.y, ((lo.x, hi.x), z), bld.reflectance))
    return faces


_IN_PLANE = np.array([[1, 2], [0, 2], [0, 1]])


def segments_occluded(
    scene: Scene,
    starts: np.ndarray,
    ends: np.ndarray,
    exclude: Sequence[Face | None] | np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized slab test of ``S`` open segments against every building.

    ``exclude`` is either one ``Face``/None per segment or an integer array of
    indices into ``scene.faces`` (-1 for none). Box contacts lying entirely on
    the excluded face (plane and extent) are ignored. Endpoints are put in
    lexicographic order first so the answer is exactly symmetric.
    """
    p = np.asarray(starts, dtype=float).reshape(-1, 3)
    q = np.asarray(ends, dtype=float).reshape(-1, 3)
    n = p.shape[0]
    lo_box, hi_box = scene.box_arrays
    if n == 0 or lo_box.shape[0] == 0:
        return np.zeros(n, dtype=bool)

    swap = (q[:, 0] < p[:, 0]) | (
        (q[:, 0] == p[:, 0]) & ((q[:, 1] < p[:, 1]) | ((q[:, 1] == p[:, 1]) & (q[:, 2] < p[:, 2])))
    )
    p, q = np.where(swap[:, None], q, p), np.where(swap[:, None], p, q)
    d = q - p

    P = p[:, None, :]
    D = d[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo_box[None] - P) / D
        t1 = (hi_box[None] - P) / D
    tlo = np.minimum(t0, t1)
    thi = np.maximum(t0, t1)
    flat = D == 0.0
    inside = (P >= lo_box[None]) & (P <= hi_box[None])
    tlo = np.where(flat, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(flat, np.where(inside, np.inf, -np.inf), thi)
    enter = np.maximum(tlo.max(axis=2), 0.0)
    leave = np.minimum(thi.min(axis=2), 1.0)
    hit = (enter <= leave) & (leave > 0.0) & (enter < 1.0)

    if exclude is not None and hit.any():
        ex = _exclusion_arrays(scene, exclude, n)
        if ex is not None:
            active, axis, offset, elo, ehi = ex
            a = P + enter[..., None] * D
            b = P + leave[..., None] * D
            ax = axis[:, None, None]
            ip = _IN_PLANE[axis][:, None, :]
            off = offset[:, None]

            def on_face(pt):
                along = np.take_along_axis(pt, ax.repeat(pt.shape[1], 1), axis=2)[..., 0]
                inp = np.take_along_axis(pt, ip.repeat(pt.shape[1], 1), axis=2)
                return (
                    (np.abs(along - off) <= PLANE_TOL)
                    & np.all(inp >= elo[:, None, :] - PLANE_TOL, axis=2)
                    & np.all(inp <= ehi[:, None, :] + PLANE_TOL, axis=2)
                )

            hit &= ~(active[:, None] & on_face(a) & on_face(b))
    return hit.any(axis=1)


def _exclusion_arrays(scene: Scene, exclude, n: int):
    if isinstance(exclude, np.ndarray) and exclude.dtype.kind in "iu":
        idx = exclude.reshape(-1)
        active = idx >= 0
        if not active.any():
            return None
        fa = scene.face_arrays
        safe = np.where(active, idx, 0)
        return active, fa["axis"][safe], fa["offset"][safe], fa["lo"][safe], fa["hi"][safe]
    faces = list(exclude)
    if len(faces) != n:
        raise ValueError(f"exclude has {len(faces)} entries for {n} segments")
    active = np.array([f is not None for f in faces], dtype=bool)
    if not active.any():
        return None
    axis = np.array([f.axis if f else 0 for f in faces], dtype=int)
    offset = np.array([f.offset if f else 0.0 for f in faces], dtype=float)
    elo = np.array([[f.extent[0][0], f.extent[1][0]] if f else [0.0, 0.0] for f in faces])
    ehi = np.array([[f.extent[0][1], f.extent[1][1]] if f else [0.0, 0.0] for f in faces])
    return active, axis, offset, elo, ehi


def segment_occluded(scene: Scene, p: Sequence[float], q: Sequence[float], exclude: Face | None = None) -> bool:
    """True iff the open segment (p, q) meets any building box (closed)."""
    return bool(segments_occluded(scene, np.array([p]), np.array([q]), [exclude])[0])


def validate_scene(scene: Scene) -> list[str]:
    problems: list[str] = []
    b = scene.bounds
    if not (b.min.is_finite() and b.max.is_finite()):
        problems.append("bounds: non-finite coordinates")
    elif not all(b.min[i] < b.max[i] for i in range(3)):
        problems.append(f"bounds: min {tuple(b.min)} not below max {tuple(b.max)}")
    if not 0.0 <= scene.ground_reflectance <= 1.0:
        problems.append(f"ground: reflectance {scene.ground_reflectance} outside [0, 1]")

    for i, bld in enumerate(scene.buildings):
        lo, hi = bld.min_corner, bld.max_corner
        if not (lo.is_finite() and hi.is_finite()):
            problems.append(f"building {i}: non-finite corner")
            continue
        if not all(lo[k] < hi[k] for k in range(3)):
            problems.append(f"building {i}: min_corner {tuple(lo)} not below max_corner {tuple(hi)}")
        if lo.z != 0.0:
            problems.append(f"building {i}: base at z={lo.z}, expected 0")
        if not 0.0 <= bld.reflectance <= 1.0:
            problems.append(f"building {i}: reflectance {bld.reflectance} outside [0, 1]")

    if not scene.receivers:
        problems.append("receivers: scene needs at least one receiver")
    for i, rx in enumerate(scene.receivers):
        if not rx.is_finite():
            problems.append(f"receiver {i}: non-finite position")
            continue
        # Receivers sit below the flight volume, so only the footprint and the
        # ceiling apply to them.
        if not (b.min.x <= rx.x <= b.max.x and b.min.y <= rx.y <= b.max.y and 0.0 <= rx.z <= b.max.z):
            problems.append(f"receiver {i}: position {tuple(rx)} outside bounds")
        for k, bld in enumerate(scene.buildings):
            if bld.box.contains(rx):
                problems.append(f"receiver {i}: position {tuple(rx)} inside building {k}")
                break
    if not scene.uav_start.is_finite():
        problems.append("uav_start: non-finite position")
    elif not b.contains(scene.uav_start):
        problems.append(f"uav_start: position {tuple(scene.uav_start)} outside bounds")
    else:
        for k, bld in enumerate(scene.buildings):
            if bld.box.contains(scene.uav_start):
                problems.append(f"uav_start: position {tuple(scene.uav_start)} inside building {k}")
                break
    return problems


# ---------------------------------------------------------------------------
# scene file format

HEADER = "scene v1"


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _fmt_vec(v: Sequence[float]) -> str:
    return ",".join(_fmt(c) for c in v)


def dumps_scene(scene: Scene) -> str:
    lines = [HEADER, f"ground reflectance={_fmt(scene.ground_reflectance)}"]
    lines.append(f"bounds min={_fmt_vec(scene.bounds.min)} max={_fmt_vec(scene.bounds.max)}")
    for bld in scene.buildings:
        lines.append(
            f"building min={_fmt_vec(bld.min_corner)} max={_fmt_vec(bld.max_corner)} "
            f"reflectance={_fmt(bld.reflectance)}"
        )
    for rx in scene.receivers:
        lines.append(f"receiver pos={_fmt_vec(rx)}")
    lines.append(f"uav start={_fmt_vec(scene.uav_start)}")
    return "\n".join(lines) + "\n"


_RECORD_FIELDS = {
    "ground": ("reflectance",),
    "bounds": ("min", "max"),
    "building": ("min", "max", "reflectance"),
    "receiver": ("pos",),
    "uav": ("start",),
}
_ORDER = ["ground", "bounds", "building", "receiver", "uav"]


def _parse_real(text: str, line: int, name: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise SceneFormatError(f"cannot parse number {text!r}", line, name) from None
    if not math.isfinite(v):
        raise SceneFormatError(f"non-finite value {text!r}", line, name)
    return v


def _parse_vec(text: str, line: int, name: str) -> Vec3:
    parts = text.split(",")
    if len(parts) != 3:
        raise SceneFormatError(f"expected x,y,z but got {text!r}", line, name)
    return Vec3(*(_parse_real(p, line, name) for p in parts))


def _parse_reflectance(text: str, line: int) -> float:
    r = _parse_real(text, line, "reflectance")
    if not 0.0 <= r <= 1.0:
        raise SceneFormatError(f"reflectance {r} outside [0, 1]", line, "reflectance")
    return r


def loads_scene(text: str) -> Scene:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise SceneFormatError("missing scene header", 1 if lines else None)

    ground = bounds = uav = None
    buildings: list[Building] = []
    receivers: list[Vec3] = []
    stage = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        kind, *tokens = raw.split()
        if kind not in _RECORD_FIELDS:
            raise SceneFormatError(f"unknown record {kind!r}", lineno)
        pos = _ORDER.index(kind)
        if pos < stage:
            raise SceneFormatError(f"record {kind!r} out of canonical order", lineno)
        stage = pos
        values: dict[str, str] = {}
        for tok in tokens:
            name, sep, val = tok.partition("=")
            if not sep:
                raise SceneFormatError(f"expected name=value, got {tok!r}", lineno)
            if name not in _RECORD_FIELDS[kind]:
                raise SceneFormatError(f"unexpected field for {kind}", lineno, name)
            values[name] = val
        for name in _RECORD_FIELDS[kind]:
            if name not in values:
                raise SceneFormatError(f"missing field for {kind}", lineno, name)

        if kind == "ground":
            if ground is not None:
                raise SceneFormatError("duplicate ground record", lineno)
            ground = _parse_reflectance(values["reflectance"], lineno)
        elif kind == "bounds":
            if bounds is not None:
                raise SceneFormatError("duplicate bounds record", lineno)
            bounds = Box(_parse_vec(values["min"], lineno, "min"), _parse_vec(values["max"], lineno, "max"))
        elif kind == "building":
            lo = _parse_vec(values["min"], lineno, "min")
            hi = _parse_vec(values["max"], lineno, "max")
            if not all(lo[i] < hi[i] for i in range(3)):
                raise SceneFormatError("min must be below max on every axis", lineno, "max")
            buildings.append(Building(lo, hi, _parse_reflectance(values["reflectance"], lineno)))
        elif kind == "receiver":
            receivers.append(_parse_vec(values["pos"], lineno, "pos"))
        else:
            if uav is not None:
                raise SceneFormatError("duplicate uav record", lineno)
            uav = _parse_vec(values["start"], lineno, "start")

    for name, val in (("ground", ground), ("bounds", bounds), ("uav", uav)):
        if val is None:
            raise SceneFormatError(f"missing {name} record", len(lines))
    if not receivers:
        raise SceneFormatError("missing receiver record", len(lines))
    return Scene(tuple(buildings), ground, tuple(receivers), uav, bounds)  # type: ignore[arg-type]


def save_scene(scene: Scene, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_scene(scene), encoding="utf-8")
    return path


def load_scene(path: str | Path) -> Scene:
    return loads_scene(Path(path).read_text(encoding="utf-8"))
