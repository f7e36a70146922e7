"""Synthetic rectilinear floorplans, augmentation, splitting and ingestion."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (
    DEFAULT_BITS,
    DEFAULT_ROOM_TYPES,
    LIVING,
    MAX_ROOMS,
    MAX_VERTICES,
    Floorplan,
    ParseError,
    RoomPolygon,
    canonical_start,
    deserialize,
    encode_front_door,
    insert_door_vertices,
    make_room,
    order_rooms,
    orient_clockwise,
    serialize,
    validate,
)
from .geometry import GeometryError, Point, contour_of_cells, rasterize, signed_area2, simplicity_problem

log = logging.getLogger(__name__)

TRANSFORMS = ("rot90", "rot180", "rot270", "flip_h", "flip_v")

# relative frequency of non-living room types in synthetic plans
_TYPE_WEIGHTS = {1: 0.4, 2: 0.25, 3: 0.15, 4: 0.12, 5: 0.08}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthParams:
    room_count_range: tuple[int, int] = (3, 8)
    boundary_notches: int = 2
    min_room_extent: int = 4
    seed: int = 0
    door_width: int = 3

    def __post_init__(self):
        lo, hi = self.room_count_range
        if not 1 <= lo <= hi <= MAX_ROOMS:
            raise ValueError(f"room_count_range {self.room_count_range} must satisfy 1 <= min <= max <= {MAX_ROOMS}")
        if self.min_room_extent < 2:
            raise ValueError("min_room_extent must be >= 2")
        if self.boundary_notches < 0:
            raise ValueError("boundary_notches must be >= 0")


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list


# --------------------------------------------------------------------------- boundary


def _edge_len(a: Point, b: Point) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _unit(a: Point, b: Point) -> Point:
    dx, dy = b[0] - a[0], b[1] - a[1]
    return (dx > 0) - (dx < 0), (dy > 0) - (dy < 0)


def _carve_corner(pts: list[Point], i: int, a: int, b: int) -> list[Point]:
    p, v, q = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
    dp, dq = _unit(v, p), _unit(v, q)
    first = (v[0] + dp[0] * b, v[1] + dp[1] * b)
    inner = (first[0] + dq[0] * a, first[1] + dq[1] * a)
    last = (v[0] + dq[0] * a, v[1] + dq[1] * a)
    return pts[:i] + [first, inner, last] + pts[i + 1 :]


def synth_boundary(rng: np.random.Generator, notches: int, size: int = 64, min_edge: int = 2) -> RoomPolygon:
    """Random clockwise rectilinear boundary with ``4 + 2 * notches`` vertices.

    A rectangle spanning at least half the grid in each direction has
    rectangular notches carved out of convex corners.
    """
    top = size - 1
    while True:
        w = int(rng.integers(size // 2, top + 1))
        h = int(rng.integers(size // 2, top + 1))
        x0 = int(rng.integers(0, top - w + 1))
        y0 = int(rng.integers(0, top - h + 1))
        # clockwise in y-up: bottom-left, top-left, top-right, bottom-right
        pts = [(x0, y0), (x0, y0 + h), (x0 + w, y0 + h), (x0 + w, y0)]
        area2 = -signed_area2(pts)
        ok = True
        for _ in range(notches):
            for _attempt in range(200):
                i = int(rng.integers(len(pts)))
                p, v, q = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
                cross = (v[0] - p[0]) * (q[1] - v[1]) - (v[1] - p[1]) * (q[0] - v[0])
                if cross >= 0:  # reflex corner in a clockwise ring
                    continue
                lp, lq = _edge_len(p, v), _edge_len(v, q)
                # notch depth at most a third of each edge keeps the interior roomy
                bmax, amax = lp // 3, lq // 3
                if amax < min_edge or bmax < min_edge:
                    continue
                a = int(rng.integers(min_edge, amax + 1))
                b = int(rng.integers(min_edge, bmax + 1))
                cand = _carve_corner(pts, i, a, b)
                if simplicity_problem(cand) is None and -signed_area2(cand) == area2 - 2 * a * b:
                    pts, area2 = cand, area2 - 2 * a * b
                    break
            else:
                ok = False
                break
        if ok:
            return RoomPolygon(tuple(pts))


# --------------------------------------------------------------------------- partition


def _piece_ok(mask: np.ndarray, min_extent: int) -> list[Point] | None:
    ring = contour_of_cells(mask)
    if ring is None or len(ring) > MAX_VERTICES:
        return None
    xs = [p[0] for p in ring]
    ys = [p[1] for p in ring]
    if max(xs) - min(xs) < min_extent or max(ys) - min(ys) < min_extent:
        return None
    n = len(ring)
    if any(_edge_len(ring[k], ring[(k + 1) % n]) < 2 for k in range(n)):
        return None
    # reject corridors narrower than two cells
    if not np.array_equal(ndimage.binary_opening(mask, structure=np.ones((2, 2), bool)), mask):
        return None
    return ring


def _guillotine(region: np.ndarray, count: int, rng: np.random.Generator, min_extent: int) -> list[np.ndarray] | None:
    pieces = [region]
    stalls = 0
    while len(pieces) < count:
        areas = np.array([p.sum() for p in pieces], dtype=float)
        k = int(rng.choice(len(pieces), p=areas / areas.sum()))
        piece = pieces[k]
        xs, ys = np.nonzero(piece)
        axis = int(rng.integers(2))
        lo, hi = (xs.min(), xs.max() + 1) if axis == 0 else (ys.min(), ys.max() + 1)
        if hi - lo < 2 * min_extent:
            axis = 1 - axis
            lo, hi = (xs.min(), xs.max() + 1) if axis == 0 else (ys.min(), ys.max() + 1)
        if hi - lo < 2 * min_extent:
            stalls += 1
            if stalls > 60:
                return None
            continue
        cut = int(rng.integers(lo + min_extent, hi - min_extent + 1))
        sel = np.zeros_like(piece)
        if axis == 0:
            sel[:cut, :] = True
        else:
            sel[:, :cut] = True
        a, b = piece & sel, piece & ~sel
        if _piece_ok(a, min_extent) is None or _piece_ok(b, min_extent) is None:
            stalls += 1
            if stalls > 60:
                return None
            continue
        pieces[k : k + 1] = [a, b]
    return pieces


def _shared_segments(poly: Sequence[Point], bnd: Sequence[Point]) -> list[tuple[int, Point, Point]]:
    """Collinear overlaps between room edges and boundary edges: (boundary edge index, start, end)."""
    out = []
    n, m = len(bnd), len(poly)
    for i in range(n):
        a, b = bnd[i], bnd[(i + 1) % n]
        for j in range(m):
            c, d = poly[j], poly[(j + 1) % m]
            if a[0] == b[0] == c[0] == d[0]:
                lo, hi = max(min(a[1], b[1]), min(c[1], d[1])), min(max(a[1], b[1]), max(c[1], d[1]))
                if hi > lo:
                    out.append((i, (a[0], lo), (a[0], hi)))
            elif a[1] == b[1] == c[1] == d[1]:
                lo, hi = max(min(a[0], b[0]), min(c[0], d[0])), min(max(a[0], b[0]), max(c[0], d[0]))
                if hi > lo:
                    out.append((i, (lo, a[1]), (hi, a[1])))
    return out


def synth_floorplan(rng: np.random.Generator, params: SynthParams, size: int = 64, attempts: int = 50) -> Floorplan:
    """Random plan whose rooms exactly partition the boundary interior."""
    lo, hi = params.room_count_range
    types = list(_TYPE_WEIGHTS)
    weights = np.array(list(_TYPE_WEIGHTS.values()))
    for _ in range(attempts):
        boundary = synth_boundary(rng, params.boundary_notches, size)
        count = int(rng.integers(lo, hi + 1))
        region = rasterize(boundary.vertices, size)
        pieces = _guillotine(region, count, rng, params.min_room_extent)
        if pieces is None:
            continue
        rings = [contour_of_cells(p) for p in pieces]
        areas = [int(p.sum()) for p in pieces]
        living = int(np.argmax(areas))
        segs = [s for s in _shared_segments(rings[living], boundary.vertices) if _edge_len(s[1], s[2]) >= 2]
        if not segs:
            continue
        _, p, q = segs[int(rng.integers(len(segs)))]
        span = _edge_len(p, q)
        width = min(params.door_width, span)
        offset = int(rng.integers(0, span - width + 1))
        d = _unit(p, q)
        dp = (p[0] + d[0] * offset, p[1] + d[1] * offset)
        dq = (dp[0] + d[0] * width, dp[1] + d[1] * width)
        bnd, door = insert_door_vertices(boundary, dp, dq)
        bnd = encode_front_door(bnd, door)
        rooms = []
        for k, ring in enumerate(rings):
            t = LIVING if k == living else int(rng.choice(types, p=weights / weights.sum()))
            poly = canonical_start(orient_clockwise(RoomPolygon(tuple(ring))))
            rooms.append(make_room(poly.vertices, t))
        fp = Floorplan(bnd, tuple(order_rooms(rooms)), DEFAULT_BITS, DEFAULT_ROOM_TYPES)
        report = validate(fp)
        if report.ok and not report.warnings:
            return fp
        log.debug("discarding synthetic plan: %s", report.violations + report.warnings)
    raise GenerationError(
        f"could not synthesize a plan with {params.room_count_range} rooms of extent >= "
        f"{params.min_room_extent} in {attempts} attempts"
    )


def synth_dataset(n: int, params: SynthParams) -> list[Floorplan]:
    """``n`` plans, sample ``i`` drawn from its own stream seeded by (seed, i)."""
    return [synth_floorplan(np.random.default_rng([params.seed, i]), params) for i in range(n)]


# --------------------------------------------------------------------------- augmentation


def _map_point(p: Point, t: str, top: int) -> Point:
    x, y = p
    if t == "rot90":
        return top - y, x
    if t == "rot180":
        return top - x, top - y
    if t == "rot270":
        return y, top - x
    if t == "flip_h":
        return top - x, y
    if t == "flip_v":
        return x, top - y
    raise ValueError(f"unknown transform {t!r}")


def augment(fp: Floorplan, t: str) -> Floorplan:
    """Rotate (counter-clockwise about the grid centre) or mirror a plan."""
    top = fp.grid_size - 1
    flips = t.startswith("flip")
    v = [_map_point(p, t, top) for p in fp.boundary.vertices]
    if flips:
        n = len(v)
        # reversal keeps the door endpoints adjacent; re-rotate so they lead again
        v = [v[0]] + v[:0:-1]
        bnd = encode_front_door(RoomPolygon(tuple(v)), (0, n - 1))
    else:
        bnd = RoomPolygon(tuple(v), door_encoded=fp.boundary.door_encoded)
    rooms = []
    for r in fp.rooms:
        poly = RoomPolygon(tuple(_map_point(p, t, top) for p in r.polygon.vertices))
        poly = canonical_start(orient_clockwise(poly))
        rooms.append(make_room(poly.vertices, r.type))
    return Floorplan(bnd, tuple(order_rooms(rooms)), fp.grid_bits, fp.room_types)


def augment_all(plans: Sequence[Floorplan]) -> list[Floorplan]:
    """Originals followed by every transformed copy."""
    out = list(plans)
    for t in TRANSFORMS:
        out += [augment(fp, t) for fp in plans]
    return out


# --------------------------------------------------------------------------- splitting and I/O


def split_dataset(plans: Sequence, seed: int, augment_train: bool = False) -> DatasetSplit:
    n = len(plans)
    if n < 10:
        raise ValueError(f"need at least 10 plans to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = round(n / 10)
    n_test = round(n / 10)
    n_train = n - n_val - n_test
    train = [plans[i] for i in order[:n_train]]
    val = [plans[i] for i in order[n_train : n_train + n_val]]
    test = [plans[i] for i in order[n_train + n_val :]]
    if augment_train:
        train = augment_all(train)
    return DatasetSplit(train, val, test)


def canonicalize(fp: Floorplan) -> Floorplan:
    """Orient every polygon clockwise and restore canonical room order."""
    bnd = fp.boundary
    if signed_area2(bnd.vertices) > 0:
        n = len(bnd.vertices)
        v = bnd.vertices
        bnd = encode_front_door(RoomPolygon((v[0],) + tuple(reversed(v[1:]))), (0, n - 1))
    rooms = [make_room(orient_clockwise(r.polygon).vertices, r.type) for r in fp.rooms]
    return Floorplan(bnd, tuple(order_rooms(rooms)), fp.grid_bits, fp.room_types)


def load_external(path: str | Path) -> tuple[list[Floorplan], int]:
    """Load every ``*.json`` plan under ``path``; returns (plans, skipped count)."""
    path = Path(path)
    files = [path] if path.is_file() else sorted(path.glob("*.json"))
    plans, skipped = [], 0
    for f in files:
        text = f.read_text(encoding="utf-8")
        try:
            fp = canonicalize(deserialize(text))
        except (ParseError, GeometryError, ValueError) as exc:
            log.warning("skipping %s: %s", f, exc)
            skipped += 1
            continue
        report = validate(fp)
        if not report.ok:
            log.warning("skipping %s: %s", f, "; ".join(report.violations))
            skipped += 1
            continue
        plans.append(fp)
    return plans, skipped


def write_dataset(out: str | Path, split: DatasetSplit) -> Path:
    """Write plans as documents plus a ``manifest.csv`` of (path, split)."""
    out = Path(out)
    (out / "plans").mkdir(parents=True, exist_ok=True)
    rows = ["path,split"]
    for name in ("train", "val", "test"):
        for i, fp in enumerate(getattr(split, name)):
            rel = f"plans/{name}_{i:05d}.json"
            (out / rel).write_text(serialize(fp), encoding="utf-8")
            rows.append(f"{rel},{name}")
    manifest = out / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest


def read_dataset(root: str | Path) -> DatasetSplit:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {root}")
    parts: dict[str, list] = {"train": [], "val": [], "test": []}
    for line in manifest.read_text(encoding="utf-8").splitlines()[1:]:
        if not line.strip():
            continue
        rel, name = line.rsplit(",", 1)
        parts[name].append(deserialize((root / rel).read_text(encoding="utf-8")))
    return DatasetSplit(parts["train"], parts["val"], parts["test"])
