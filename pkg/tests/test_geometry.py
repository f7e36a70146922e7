import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecplan.geometry import (
    GeometryError,
    bbox,
    centroid,
    contour_of_cells,
    is_rectilinear,
    polygon_area,
    rasterize,
    remove_collinear,
    shared_boundary_length,
    signed_area2,
    simplicity_problem,
)

L_SHAPE = ((0, 0), (0, 2), (1, 2), (1, 1), (2, 1), (2, 0))


def test_l_shape_area():
    assert polygon_area(L_SHAPE) == 3
    assert signed_area2(L_SHAPE) == -6


def test_bowtie_rejected():
    with pytest.raises(GeometryError):
        polygon_area(((0, 0), (2, 2), (2, 0), (0, 2)))


@pytest.mark.parametrize("pts,fragment", [
    (((0, 0), (1, 1)), "vertices"),
    (((0, 0), (0, 0), (1, 1)), "coincide"),
    (((0, 0), (1, 1), (2, 2)), "zero area"),
    (((0, 0), (0, 2), (2, 2), (2, 4), (4, 4), (4, 2), (2, 2), (2, 0)), "repeats"),
])
def test_simplicity_problems(pts, fragment):
    assert fragment in simplicity_problem(pts)


def test_collinear_door_vertices_allowed():
    assert simplicity_problem(((0, 0), (0, 3), (0, 6), (6, 6), (6, 0))) is None


def test_bbox_and_centroid():
    sq = ((2, 3), (2, 7), (6, 7), (6, 3))
    assert bbox(sq) == (2, 3, 4, 4)
    assert centroid(sq) == pytest.approx((4.0, 5.0))


def test_remove_collinear():
    assert remove_collinear([(0, 0), (0, 2), (0, 4), (4, 4), (4, 0), (0, 0)]) == [(0, 0), (0, 4), (4, 4), (4, 0)]


def test_shared_boundary_length():
    a = ((0, 0), (0, 4), (4, 4), (4, 0))
    b = ((4, 1), (4, 6), (8, 6), (8, 1))
    assert shared_boundary_length(a, b) == 3
    assert shared_boundary_length(a, ((5, 0), (5, 1), (6, 1), (6, 0))) == 0


def test_rasterize_counts_area():
    m = rasterize(L_SHAPE, 4)
    assert m.sum() == 3
    assert m[0, 0] and m[0, 1] and m[1, 0] and not m[1, 1]


def _rects():
    return st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 10), st.integers(1, 10))


@settings(max_examples=60, deadline=None)
@given(st.lists(_rects(), min_size=1, max_size=3))
def test_contour_roundtrip(rects):
    mask = np.zeros((32, 32), dtype=bool)
    for x, y, w, h in rects:
        mask[x : x + w, y : y + h] = True
    ring = contour_of_cells(mask)
    if ring is None:
        return  # disconnected, holed or pinched sets are refused
    assert signed_area2(ring) < 0
    assert is_rectilinear(ring)
    assert simplicity_problem(ring) is None
    assert (rasterize(ring, 32) == mask).all()


def test_contour_refuses_hole_and_pinch():
    ring = np.ones((5, 5), dtype=bool)
    ring[2, 2] = False
    assert contour_of_cells(ring) is None
    pinch = np.zeros((4, 4), dtype=bool)
    pinch[0, 0] = pinch[1, 1] = True
    assert contour_of_cells(pinch) is None
    assert contour_of_cells(np.zeros((3, 3), dtype=bool)) is None
