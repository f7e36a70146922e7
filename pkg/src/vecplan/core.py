"""Vector floorplan data model: grid quantization, canonical ordering,
orientation, front-door encoding, validation and (de)serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geometry import GeometryError, Point, bbox, signed_area2, simplicity_problem

DEFAULT_ROOM_TYPES: tuple[str, ...] = ("living", "bedroom", "bathroom", "kitchen", "balcony", "storage")
LIVING = 0
DEFAULT_BITS = 6
MAX_ROOMS = 20
MAX_VERTICES = 40


class ValidationError(ValueError):
    pass


class ParseError(ValueError):
    pass


def quantize_coord(v: float, bits: int = DEFAULT_BITS) -> int:
    if bits not in (5, 6, 7):
        raise ValueError(f"bits must be 5, 6 or 7, got {bits}")
    if not (0.0 <= v <= 1.0) or math.isnan(v):
        raise ValueError(f"coordinate {v!r} outside [0, 1]")
    n = 1 << bits
    return min(max(math.floor(v * n), 0), n - 1)


def dequantize_coord(g: int, bits: int = DEFAULT_BITS) -> float:
    return (g + 0.5) / (1 << bits)


def rescale_coord(g: int, from_bits: int, to_bits: int) -> int:
    """Map a grid index between bit widths through the bin midpoint."""
    if from_bits == to_bits:
        return g
    return quantize_coord(dequantize_coord(g, from_bits), to_bits)


@dataclass(frozen=True)
class RoomBox:
    x: int
    y: int
    w: int
    h: int
    c: int


@dataclass(frozen=True)
class RoomPolygon:
    vertices: tuple[Point, ...]
    door_encoded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple((int(x), int(y)) for x, y in self.vertices))

    def __len__(self):
        return len(self.vertices)


@dataclass(frozen=True)
class Room:
    box: RoomBox
    polygon: RoomPolygon

    @property
    def type(self) -> int:
        return self.box.c


def make_room(vertices: Iterable[Point], room_type: int) -> Room:
    """Build a room whose box is the bounding box of its polygon."""
    poly = RoomPolygon(tuple(vertices))
    x, y, w, h = bbox(poly.vertices)
    return Room(RoomBox(x, y, w, h, room_type), poly)


@dataclass(frozen=True)
class Floorplan:
    boundary: RoomPolygon
    rooms: tuple[Room, ...]
    grid_bits: int = DEFAULT_BITS
    room_types: tuple[str, ...] = DEFAULT_ROOM_TYPES

    def __post_init__(self):
        object.__setattr__(self, "rooms", tuple(self.rooms))
        object.__setattr__(self, "room_types", tuple(self.room_types))

    @property
    def grid_size(self) -> int:
        return 1 << self.grid_bits


# --------------------------------------------------------------------------- ordering / orientation


def order_rooms(rooms: Sequence[Room]) -> list[Room]:
    """Living room first, the rest by bottom-left corner (x, then y), stable."""
    living = [r for r in rooms if r.type == LIVING]
    if len(living) > 1:
        raise ValidationError(f"{len(living)} living rooms present, at most one allowed")
    rest = sorted((r for r in rooms if r.type != LIVING), key=lambda r: (r.box.x, r.box.y))
    return living + rest


def orient_clockwise(poly: RoomPolygon) -> RoomPolygon:
    """Return the polygon with clockwise (negative-area) vertex order, same start vertex."""
    problem = simplicity_problem(poly.vertices)
    if problem is not None:
        raise GeometryError(problem)
    if signed_area2(poly.vertices) < 0:
        return poly
    v = poly.vertices
    return RoomPolygon((v[0],) + tuple(reversed(v[1:])), poly.door_encoded)


def encode_front_door(boundary: RoomPolygon, door: tuple[int, int]) -> RoomPolygon:
    """Rotate the clockwise boundary so the door vertices sit at positions 0 and 1."""
    v = boundary.vertices
    n = len(v)
    a, b = door
    if not (0 <= a < n and 0 <= b < n):
        raise ValueError(f"door indices {door} out of range for {n} vertices")
    if b == (a + 1) % n:
        start = a
    elif a == (b + 1) % n:
        start = b
    else:
        raise ValueError(f"door vertices {door} are not adjacent")
    return RoomPolygon(v[start:] + v[:start], door_encoded=True)


def insert_door_vertices(boundary: RoomPolygon, p: Point, q: Point) -> tuple[RoomPolygon, tuple[int, int]]:
    """Materialize door endpoints lying on one boundary edge as vertices.

    Returns the new polygon and the indices of the two door vertices.
    """
    v = list(boundary.vertices)
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        if _on_edge(a, b, p) and _on_edge(a, b, q) and p != q:
            # order p, q along a -> b
            if _param(a, b, p) > _param(a, b, q):
                p, q = q, p
            new = [w for w in (p, q) if w not in (a, b)]
            out = v[: i + 1] + new + v[i + 1 :]
            ip = out.index(p) if p in out else None
            iq = out.index(q) if q in out else None
            return RoomPolygon(tuple(out), boundary.door_encoded), (ip, iq)
    raise ValueError(f"door endpoints {p}, {q} do not lie on a single boundary edge")


def _on_edge(a: Point, b: Point, p: Point) -> bool:
    cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    return cross == 0 and min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _param(a: Point, b: Point, p: Point) -> int:
    return (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])


def canonical_start(poly: RoomPolygon) -> RoomPolygon:
    """Rotate a room polygon to start at its lowest-x, then lowest-y vertex."""
    v = poly.vertices
    k = min(range(len(v)), key=lambda i: v[i])
    return RoomPolygon(v[k:] + v[:k], poly.door_encoded)


# --------------------------------------------------------------------------- validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _polygon_issues(poly: RoomPolygon, what: str, size: int) -> list[str]:
    issues = []
    v = poly.vertices
    if not 3 <= len(v) <= MAX_VERTICES:
        issues.append(f"{what}: vertex count {len(v)} outside [3, {MAX_VERTICES}]")
    bad = [p for p in v if not (0 <= p[0] < size and 0 <= p[1] < size)]
    if bad:
        issues.append(f"{what}: coordinates off grid {bad[:3]}")
    if len(v) >= 3:
        problem = simplicity_problem(v)
        if problem is not None:
            issues.append(f"{what}: not simple ({problem})")
        elif signed_area2(v) > 0:
            issues.append(f"{what}: not clockwise")
    return issues


def validate(fp: Floorplan) -> ValidationReport:
    """Check every structural invariant of a floorplan; never raises."""
    report = ValidationReport()
    size = fp.grid_size
    k = len(fp.room_types)
    if not fp.boundary.door_encoded:
        report.violations.append("boundary: front door not encoded")
    report.violations += _polygon_issues(fp.boundary, "boundary", size)
    m = len(fp.rooms)
    if not 1 <= m <= MAX_ROOMS:
        report.violations.append(f"room count {m} outside [1, {MAX_ROOMS}]")
    for i, room in enumerate(fp.rooms):
        what = f"room {i}"
        if not 0 <= room.type < k:
            report.violations.append(f"{what}: type id {room.type} outside [0, {k})")
        report.violations += _polygon_issues(room.polygon, what, size)
        b = room.box
        if b.w < 1 or b.h < 1 or b.x + b.w > size or b.y + b.h > size:
            report.violations.append(f"{what}: box {b} violates extent limits")
        if room.polygon.vertices and bbox(room.polygon.vertices) != (b.x, b.y, b.w, b.h):
            report.violations.append(f"{what}: box does not match polygon bounding box")
    living = sum(1 for r in fp.rooms if r.type == LIVING)
    try:
        if list(fp.rooms) != order_rooms(fp.rooms):
            report.violations.append("rooms not in canonical order")
    except ValidationError as exc:
        report.violations.append(str(exc))
    if k == len(DEFAULT_ROOM_TYPES) and living != 1:
        report.warnings.append(f"expected exactly one living room, found {living}")
    return report


def structural_problems(fp: Floorplan) -> list[str]:
    """Syntax-level checks only: counts, grid bounds, type ids, boxes, door, round-trip.

    Unlike :func:`validate` this ignores polygon simplicity and orientation,
    which are geometric qualities of a generated plan rather than format rules.
    """
    out = []
    size = fp.grid_size
    if not fp.boundary.door_encoded:
        out.append("boundary: front door not encoded")
    if not 1 <= len(fp.rooms) <= MAX_ROOMS:
        out.append(f"room count {len(fp.rooms)} outside [1, {MAX_ROOMS}]")
    for i, room in enumerate([None] + list(fp.rooms)):
        poly = fp.boundary if room is None else room.polygon
        what = "boundary" if room is None else f"room {i - 1}"
        if not 3 <= len(poly.vertices) <= MAX_VERTICES:
            out.append(f"{what}: vertex count {len(poly.vertices)} outside [3, {MAX_VERTICES}]")
        if any(not (0 <= c < size) for p in poly.vertices for c in p):
            out.append(f"{what}: coordinates off grid")
        if room is not None:
            if not 0 <= room.type < len(fp.room_types):
                out.append(f"{what}: type id {room.type} out of range")
            if bbox(poly.vertices) != (room.box.x, room.box.y, room.box.w, room.box.h):
                out.append(f"{what}: box does not match polygon bounding box")
    if not out:
        try:
            if deserialize(serialize(fp)) != fp:
                out.append("document does not round-trip")
        except ParseError as exc:
            out.append(f"document does not parse: {exc}")
    return out


# --------------------------------------------------------------------------- serialization


def to_document(fp: Floorplan) -> dict:
    return {
        "grid_bits": fp.grid_bits,
        "room_types": list(fp.room_types),
        "boundary": {
            "vertices": [list(p) for p in fp.boundary.vertices],
            "door": [0, 1] if fp.boundary.door_encoded else None,
        },
        "rooms": [
            {"type": fp.room_types[r.type], "vertices": [list(p) for p in r.polygon.vertices]}
            for r in fp.rooms
        ],
    }


def serialize(fp: Floorplan) -> str:
    return json.dumps(to_document(fp), indent=1) + "\n"


def _vertices(raw, where: str, size: int) -> tuple[Point, ...]:
    if not isinstance(raw, list) or not raw:
        raise ParseError(f"{where}: expected a non-empty list of [x, y] pairs")
    out = []
    for j, p in enumerate(raw):
        if not (isinstance(p, list) and len(p) == 2 and all(isinstance(c, int) and not isinstance(c, bool) for c in p)):
            raise ParseError(f"{where}[{j}]: expected [int, int], got {p!r}")
        if not all(0 <= c < size for c in p):
            raise ParseError(f"{where}[{j}]: coordinate {p} outside grid [0, {size - 1}]")
        out.append((p[0], p[1]))
    return tuple(out)


def from_document(doc) -> Floorplan:
    if not isinstance(doc, dict):
        raise ParseError("document root must be an object")
    for key in ("boundary", "rooms"):
        if key not in doc:
            raise ParseError(f"missing required key {key!r}")
    bits = doc.get("grid_bits", DEFAULT_BITS)
    if bits not in (5, 6, 7):
        raise ParseError(f"grid_bits: unsupported value {bits!r}")
    size = 1 << bits
    types = doc.get("room_types", list(DEFAULT_ROOM_TYPES))
    if not isinstance(types, list) or not all(isinstance(t, str) for t in types):
        raise ParseError("room_types: expected a list of labels")
    bnd = doc["boundary"]
    if not isinstance(bnd, dict) or "vertices" not in bnd:
        raise ParseError("boundary: expected object with 'vertices'")
    poly = RoomPolygon(_vertices(bnd["vertices"], "boundary.vertices", size))
    door = bnd.get("door")
    if door is not None:
        if not (isinstance(door, list) and len(door) == 2 and all(isinstance(i, int) for i in door)):
            raise ParseError(f"boundary.door: expected [i0, i1], got {door!r}")
        try:
            poly = encode_front_door(poly, (door[0], door[1]))
        except ValueError as exc:
            raise ParseError(f"boundary.door: {exc}") from None
    if not isinstance(doc["rooms"], list):
        raise ParseError("rooms: expected a list")
    rooms = []
    for i, r in enumerate(doc["rooms"]):
        if not isinstance(r, dict):
            raise ParseError(f"rooms[{i}]: expected an object")
        label = r.get("type")
        if label not in types:
            raise ParseError(f"rooms[{i}].type: unknown label {label!r}")
        verts = _vertices(r.get("vertices"), f"rooms[{i}].vertices", size)
        room = make_room(verts, types.index(label))
        if "box" in r and list(r["box"]) != [room.box.x, room.box.y, room.box.w, room.box.h]:
            raise ParseError(f"rooms[{i}].box: stored box {r['box']} disagrees with polygon bounds")
        rooms.append(room)
    return Floorplan(poly, tuple(rooms), bits, tuple(types))


def deserialize(text: str) -> Floorplan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return from_document(doc)
