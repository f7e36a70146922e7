"""Gap / overlap / exceed ratios and MSE statistics for generated plans."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Floorplan
from .geometry import GeometryError, Point, centroid, signed_area2, is_rectilinear, shared_boundary_length, simplicity_problem

METRICS_VERSION = "1"


@dataclass
class AreaReport:
    boundary_area: int
    gap_area: int
    overlap_area: int
    exceed_area: int
    room_areas: list = field(default_factory=list)
    approximate: bool = False

    @property
    def covered_area(self):
        return self.boundary_area - self.gap_area


@dataclass
class EvalSummary:
    mrg: float
    mro: float = field()  # explicit: bare name would pick up type.mro as a default
    mre: float
    mse_t: float
    mse_a: float
    mse_s: float
    n_samples: int


def polygon_area(poly) -> int:
    from .geometry import polygon_area as _area

    return _area(_verts(poly))


def _verts(poly) -> tuple[Point, ...]:
    return tuple(poly.vertices) if hasattr(poly, "vertices") else tuple(poly)


def _inside_grid(pts: Sequence[Point], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd occupancy of the compressed cells [xs[i], xs[i+1]] x [ys[j], ys[j+1]]."""
    xi = {x: i for i, x in enumerate(xs.tolist())}
    yi = {y: j for j, y in enumerate(ys.tolist())}
    toggles = np.zeros((len(xs), len(ys) - 1), dtype=np.int8)
    n = len(pts)
    for k in range(n):
        (x0, y0), (x1, y1) = pts[k], pts[(k + 1) % n]
        if x0 == x1 and y0 != y1:
            lo, hi = sorted((yi[y0], yi[y1]))
            toggles[xi[x0], lo:hi] ^= 1
    return (np.cumsum(toggles, axis=0)[:-1] & 1).astype(bool)


def boolean_areas(polys: Sequence, boundary, strict: bool = True) -> AreaReport:
    """Exact gap/overlap/exceed areas of rectilinear rooms against a boundary.

    Coordinates are compressed to the distinct vertex abscissae/ordinates;
    each elementary cell is uniformly in or out of every polygon, so area
    sums are exact integers. Non-rectilinear input falls back to a 4x
    supersampled raster and sets ``approximate``. With ``strict=False``
    self-intersecting rooms are filled by the even-odd rule instead of
    raising, and rooms with fewer than three vertices are ignored.
    """
    rooms = [_verts(p) for p in polys]
    bnd = _verts(boundary)
    problem = simplicity_problem(bnd)
    if problem is not None:
        raise GeometryError(f"boundary: {problem}")
    if strict:
        for pts in rooms:
            problem = simplicity_problem(pts)
            if problem is not None:
                raise GeometryError(problem)
    else:
        rooms = [p for p in rooms if len(p) >= 3]
    if not all(is_rectilinear(p) for p in rooms + [bnd]):
        return raster_areas(rooms, bnd, scale=4)
    xs = np.unique([p[0] for pts in rooms + [bnd] for p in pts])
    ys = np.unique([p[1] for pts in rooms + [bnd] for p in pts])
    cell = np.outer(np.diff(xs), np.diff(ys)).astype(np.int64)
    inside_b = _inside_grid(bnd, xs, ys)
    count = np.zeros_like(cell)
    room_areas = []
    for pts in rooms:
        m = _inside_grid(pts, xs, ys)
        count += m
        room_areas.append(int(cell[m].sum()))
    union = count > 0
    b_area = int(cell[inside_b].sum())
    covered = int(cell[union & inside_b].sum())
    overlap = int((cell * np.maximum(count - 1, 0))[inside_b].sum())
    exceed = int(cell[union].sum()) - covered
    return AreaReport(b_area, b_area - covered, overlap, exceed, room_areas)


def raster_areas(rooms: Sequence[Sequence[Point]], bnd: Sequence[Point], scale: int = 4, size: int = 64) -> AreaReport:
    """Sub-cell sampling fallback for polygons with slanted edges."""
    c = (np.arange(size * scale) + 0.5) / scale
    X, Y = np.meshgrid(c, c, indexing="ij")

    def inside(pts):
        res = np.zeros(X.shape, dtype=bool)
        n = len(pts)
        for k in range(n):
            (x0, y0), (x1, y1) = pts[k], pts[(k + 1) % n]
            if y0 == y1:
                continue
            crosses = (Y > min(y0, y1)) & (Y <= max(y0, y1))
            xint = x0 + (Y - y0) * (x1 - x0) / (y1 - y0)
            res ^= crosses & (X < xint)
        return res

    w = 1.0 / scale**2
    mb = inside(bnd)
    count = np.zeros(X.shape, dtype=np.int64)
    areas = []
    for pts in rooms:
        m = inside(pts)
        count += m
        areas.append(float(m.sum() * w))
    union = count > 0
    b_area = float(mb.sum() * w)
    covered = float((union & mb).sum() * w)
    return AreaReport(
        b_area, b_area - covered, float(np.maximum(count - 1, 0)[mb].sum() * w), float(union.sum() * w) - covered, areas, True
    )


def plan_areas(fp: Floorplan, strict: bool = True) -> AreaReport:
    return boolean_areas([r.polygon for r in fp.rooms], fp.boundary, strict)


def mrg(reports: Sequence[AreaReport]) -> float:
    if not reports:
        raise ValueError("no reports")
    return float(np.mean([r.gap_area / r.boundary_area for r in reports]))


def mro(reports: Sequence[AreaReport]) -> float:
    if not reports:
        raise ValueError("no reports")
    return float(np.mean([r.overlap_area / r.boundary_area for r in reports]))


def mre(reports: Sequence[AreaReport]) -> float:
    if not reports:
        raise ValueError("no reports")
    return float(np.mean([r.exceed_area / (r.exceed_area + r.boundary_area) for r in reports]))


# --------------------------------------------------------------------------- statistics


def adjacency_matrix(fp: Floorplan, min_shared: float = 2) -> np.ndarray:
    m = len(fp.rooms)
    adj = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            shared = shared_boundary_length(fp.rooms[i].polygon.vertices, fp.rooms[j].polygon.vertices)
            adj[i, j] = adj[j, i] = shared >= min_shared
    return adj


def type_counts(fp: Floorplan) -> np.ndarray:
    return np.bincount([r.type for r in fp.rooms], minlength=len(fp.room_types)).astype(float)


def type_adjacency_counts(fp: Floorplan, min_shared: float = 2) -> np.ndarray:
    """Adjacent-room counts per unordered type pair, upper triangle flattened."""
    k = len(fp.room_types)
    counts = np.zeros((k, k))
    adj = adjacency_matrix(fp, min_shared)
    for i, j in zip(*np.nonzero(np.triu(adj, 1))):
        a, b = sorted((fp.rooms[i].type, fp.rooms[j].type))
        counts[a, b] += 1
    return counts[np.triu_indices(k)]


def size_error(gen: Floorplan, ref: Floorplan) -> float:
    """Squared area error over type-matched rooms, areas in units of 100 cells."""
    def rooms_of(fp):
        return [(r.type, centroid(r.polygon.vertices), abs(signed_area2(r.polygon.vertices)) / 200.0) for r in fp.rooms]

    g, r = rooms_of(gen), rooms_of(ref)
    total = 0.0
    for t in set(x[0] for x in g) | set(x[0] for x in r):
        gs = [x for x in g if x[0] == t]
        rs = [x for x in r if x[0] == t]
        pairs = sorted(
            ((gc[0] - rc[0]) ** 2 + (gc[1] - rc[1]) ** 2, i, j)
            for i, (_, gc, _) in enumerate(gs)
            for j, (_, rc, _) in enumerate(rs)
        )
        used_g, used_r = set(), set()
        for _, i, j in pairs:
            if i in used_g or j in used_r:
                continue
            used_g.add(i)
            used_r.add(j)
            total += (gs[i][2] - rs[j][2]) ** 2
        total += sum(gs[i][2] ** 2 for i in range(len(gs)) if i not in used_g)
        total += sum(rs[j][2] ** 2 for j in range(len(rs)) if j not in used_r)
    return total


def _check_paired(gen, ref):
    if len(gen) != len(ref) or not gen:
        raise ValueError(f"unpaired sets: {len(gen)} generated vs {len(ref)} reference")


def mse_t(gen: Sequence[Floorplan], ref: Sequence[Floorplan]) -> float:
    _check_paired(gen, ref)
    return float(np.mean([((type_counts(g) - type_counts(r)) ** 2).sum() for g, r in zip(gen, ref)]))


def mse_a(gen: Sequence[Floorplan], ref: Sequence[Floorplan], min_shared: float = 2) -> float:
    _check_paired(gen, ref)
    return float(
        np.mean(
            [((type_adjacency_counts(g, min_shared) - type_adjacency_counts(r, min_shared)) ** 2).sum() for g, r in zip(gen, ref)]
        )
    )


def mse_s(gen: Sequence[Floorplan], ref: Sequence[Floorplan]) -> float:
    _check_paired(gen, ref)
    return float(np.mean([size_error(g, r) for g, r in zip(gen, ref)]))


@dataclass
class SampleRow:
    id: str
    gap_ratio: float
    overlap_ratio: float
    exceed_ratio: float
    count_err: float
    adjacency_err: float
    size_err: float


def evaluate(gen: Sequence[Floorplan], ref: Sequence[Floorplan], ids: Sequence[str] | None = None,
             min_shared: float = 2) -> tuple[EvalSummary, list[SampleRow]]:
    _check_paired(gen, ref)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(gen))]
    rows = []
    reports = []
    for sid, g, r in zip(ids, gen, ref):
        rep = plan_areas(g, strict=False)
        reports.append(rep)
        rows.append(
            SampleRow(
                sid,
                rep.gap_area / rep.boundary_area,
                rep.overlap_area / rep.boundary_area,
                rep.exceed_area / (rep.exceed_area + rep.boundary_area),
                float(((type_counts(g) - type_counts(r)) ** 2).sum()),
                float(((type_adjacency_counts(g, min_shared) - type_adjacency_counts(r, min_shared)) ** 2).sum()),
                size_error(g, r),
            )
        )
    summary = EvalSummary(
        mrg=mrg(reports),
        mro=mro(reports),
        mre=mre(reports),
        mse_t=float(np.mean([x.count_err for x in rows])),
        mse_a=float(np.mean([x.adjacency_err for x in rows])),
        mse_s=float(np.mean([x.size_err for x in rows])),
        n_samples=len(rows),
    )
    return summary, rows


def summary_csv(summary: EvalSummary, rows: Sequence[SampleRow], min_shared: float = 2) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# metrics_version={METRICS_VERSION}", f"min_shared={min_shared}"])
    w.writerow(["id", "gap_ratio", "overlap_ratio", "exceed_ratio", "mse_t", "mse_a", "mse_s"])
    for r in rows:
        w.writerow([r.id, f"{r.gap_ratio:.6f}", f"{r.overlap_ratio:.6f}", f"{r.exceed_ratio:.6f}",
                    f"{r.count_err:.6f}", f"{r.adjacency_err:.6f}", f"{r.size_err:.6f}"])
    w.writerow(["# aggregate"])
    w.writerow(["n_samples", "mrg", "mro", "mre", "mse_t", "mse_a", "mse_s"])
    w.writerow([summary.n_samples, f"{summary.mrg:.6f}", f"{summary.mro:.6f}", f"{summary.mre:.6f}",
                f"{summary.mse_t:.6f}", f"{summary.mse_a:.6f}", f"{summary.mse_s:.6f}"])
    return buf.getvalue()
