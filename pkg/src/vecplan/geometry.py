"""Exact integer geometry helpers for grid polygons."""

from __future__ import annotations

from typing import Sequence

Point = tuple[int, int]


class GeometryError(ValueError):
    """Raised for degenerate or self-intersecting polygons."""


def signed_area2(pts: Sequence[Point]) -> int:
    """Twice the signed shoelace area (positive = counter-clockwise, y-up)."""
    n = len(pts)
    s = 0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return s


def _orient(a: Point, b: Point, c: Point) -> int:
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _on_segment(a: Point, b: Point, p: Point) -> bool:
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    """Closed-segment intersection test (touching counts)."""
    o1, o2, o3, o4 = _orient(a, b, c), _orient(a, b, d), _orient(c, d, a), _orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def simplicity_problem(pts: Sequence[Point]) -> str | None:
    """Return a description of why ``pts`` is not a simple polygon, or None."""
    n = len(pts)
    if n < 3:
        return f"polygon has {n} vertices, need at least 3"
    for i in range(n):
        if pts[i] == pts[(i + 1) % n]:
            return f"consecutive vertices {i} and {(i + 1) % n} coincide"
    if signed_area2(pts) == 0:
        return "polygon has zero area"
    if len(set(pts)) != n:
        return "polygon repeats a vertex"
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            c, d = pts[j], pts[(j + 1) % n]
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent edges share one endpoint; they must not fold back onto each other
                shared = b if j == i + 1 else a
                other_e1 = a if j == i + 1 else b
                other_e2 = d if j == i + 1 else c
                if _orient(other_e1, shared, other_e2) == 0:
                    # collinear adjacent edges: fine only if they point away from each other
                    v1 = (other_e1[0] - shared[0], other_e1[1] - shared[1])
                    v2 = (other_e2[0] - shared[0], other_e2[1] - shared[1])
                    if v1[0] * v2[0] + v1[1] * v2[1] > 0:
                        return f"edges {i} and {j} overlap"
                continue
            if segments_intersect(a, b, c, d):
                return f"edges {i} and {j} intersect"
    return None


def is_rectilinear(pts: Sequence[Point]) -> bool:
    n = len(pts)
    return all(pts[i][0] == pts[(i + 1) % n][0] or pts[i][1] == pts[(i + 1) % n][1] for i in range(n))


def polygon_area(pts: Sequence[Point]) -> int:
    """Exact area of a simple grid polygon.

    Raises GeometryError for self-intersecting input. Rectilinear grid
    polygons always have integer area; for general lattice polygons the
    area is rounded down to the nearest integer.
    """
    problem = simplicity_problem(pts)
    if problem is not None:
        raise GeometryError(problem)
    return abs(signed_area2(pts)) // 2


def bbox(pts: Sequence[Point]) -> tuple[int, int, int, int]:
    """Axis-aligned bounding box as (x, y, w, h)."""
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)


def centroid(pts: Sequence[Point]) -> tuple[float, float]:
    a2 = signed_area2(pts)
    if a2 == 0:
        n = len(pts)
        return sum(p[0] for p in pts) / n, sum(p[1] for p in pts) / n
    cx = cy = 0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        cross = x0 * y1 - x1 * y0
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    return cx / (3 * a2), cy / (3 * a2)


def remove_collinear(pts: Sequence[Point]) -> list[Point]:
    """Drop repeated and collinear interior vertices of a closed ring."""
    ring = []
    for p in pts:
        if not ring or ring[-1] != p:
            ring.append(p)
    while len(ring) > 1 and ring[0] == ring[-1]:
        ring.pop()
    changed = True
    while changed and len(ring) >= 3:
        changed = False
        for i in range(len(ring)):
            a, b, c = ring[i - 1], ring[i], ring[(i + 1) % len(ring)]
            if _orient(a, b, c) == 0:
                del ring[i]
                changed = True
                break
    return ring


def shared_boundary_length(p: Sequence[Point], q: Sequence[Point]) -> float:
    """Total length of collinear overlap between the edges of two polygons."""
    total = 0.0
    n, m = len(p), len(q)
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        for j in range(m):
            c, d = q[j], q[(j + 1) % m]
            if _orient(a, b, c) != 0 or _orient(a, b, d) != 0:
                continue
            # collinear: project onto the dominant axis of ab
            ax = 0 if abs(b[0] - a[0]) >= abs(b[1] - a[1]) else 1
            lo = max(min(a[ax], b[ax]), min(c[ax], d[ax]))
            hi = min(max(a[ax], b[ax]), max(c[ax], d[ax]))
            if hi > lo:
                seg = abs(b[ax] - a[ax])
                full = ((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2) ** 0.5
                total += (hi - lo) * full / seg
    return total


def rasterize(pts: Sequence[Point], size: int) -> "np.ndarray":
    """Unit-cell occupancy of a rectilinear polygon, indexed ``mask[x, y]``."""
    import numpy as np

    mask = np.zeros((size, size), dtype=bool)
    n = len(pts)
    for i in range(n):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % n]
        if x0 == x1 and y0 != y1:
            lo, hi = min(y0, y1), max(y0, y1)
            mask[x0:, lo:hi] ^= True
    return mask


def contour_of_cells(mask: "np.ndarray") -> list[Point] | None:
    """Clockwise outline of a 4-connected cell set, or None if it is not a simple polygon.

    Returns None for empty sets, multiple components, holes and pinch points.
    """
    import numpy as np

    xs, ys = np.nonzero(mask)
    if len(xs) == 0:
        return None
    padded = np.pad(mask, 1)
    nxt: dict[Point, Point] = {}

    def add(a: Point, b: Point) -> bool:
        if a in nxt:
            return False
        nxt[a] = b
        return True

    for x, y in zip(xs.tolist(), ys.tolist()):
        px, py = x + 1, y + 1
        ok = True
        if not padded[px, py - 1]:
            ok &= add((x + 1, y), (x, y))
        if not padded[px, py + 1]:
            ok &= add((x, y + 1), (x + 1, y + 1))
        if not padded[px - 1, py]:
            ok &= add((x, y), (x, y + 1))
        if not padded[px + 1, py]:
            ok &= add((x + 1, y + 1), (x + 1, y))
        if not ok:
            return None
    start = min(nxt)
    ring = [start]
    cur = nxt[start]
    while cur != start:
        ring.append(cur)
        cur = nxt[cur]
        if len(ring) > len(nxt):
            return None
    if len(ring) != len(nxt):
        return None
    return remove_collinear(ring)
