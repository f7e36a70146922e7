import numpy as np
import pytest

from oracles import random_rectilinear_plan, raster_areas
from vecplan.core import Floorplan, RoomPolygon, make_room
from vecplan.data import SynthParams, synth_dataset
from vecplan.geometry import GeometryError
from vecplan.metrics import (
    adjacency_matrix,
    boolean_areas,
    evaluate,
    mrg,
    mse_a,
    mse_s,
    mse_t,
    plan_areas,
    polygon_area,
    size_error,
    summary_csv,
    type_counts,
)


def rect(x, y, w, h):
    return [(x, y), (x, y + h), (x + w, y + h), (x + w, y)]


BND = rect(0, 0, 10, 10)


def test_gap():
    r = boolean_areas([rect(0, 0, 10, 6)], BND)
    assert (r.boundary_area, r.gap_area, r.overlap_area, r.exceed_area) == (100, 40, 0, 0)


def test_overlap():
    r = boolean_areas([rect(0, 0, 10, 6), rect(0, 4, 10, 6)], BND)
    assert r.overlap_area == 20 and r.gap_area == 0


def test_exceed_and_ratio():
    r = boolean_areas([rect(0, 0, 10, 12)], BND)
    assert r.exceed_area == 20
    assert r.exceed_area / (r.exceed_area + r.boundary_area) == pytest.approx(1 / 6)


def test_l_shape_area():
    assert polygon_area([(0, 0), (0, 2), (1, 2), (1, 1), (2, 1), (2, 0)]) == 3


def test_strict_rejects_bowtie_lenient_drops_degenerate():
    bow = [(0, 0), (4, 4), (4, 0), (0, 4)]
    with pytest.raises(GeometryError):
        boolean_areas([bow], BND)
    r = boolean_areas([[(1, 1), (2, 2)], rect(0, 0, 10, 10)], BND, strict=False)
    assert r.gap_area == 0


def test_slanted_edges_use_raster_fallback():
    r = boolean_areas([[(0, 0), (0, 10), (10, 0)]], BND)
    assert r.approximate
    assert r.gap_area == pytest.approx(50, abs=1.5)


def test_random_plans_match_raster_oracle():
    rng = np.random.default_rng(7)
    for _ in range(100):
        bnd, rooms = random_rectilinear_plan(rng)
        r = boolean_areas(rooms, bnd)
        assert (r.boundary_area, r.gap_area, r.overlap_area, r.exceed_area) == raster_areas(rooms, bnd)
        assert r.covered_area + r.gap_area == r.boundary_area


def test_empty_report_list_raises():
    with pytest.raises(ValueError):
        mrg([])


@pytest.fixture(scope="module")
def plans():
    return synth_dataset(8, SynthParams(seed=5))


def test_self_evaluation_is_zero(plans):
    summary, rows = evaluate(plans, plans)
    assert (summary.mrg, summary.mro, summary.mre) == (0, 0, 0)
    assert (summary.mse_t, summary.mse_a, summary.mse_s) == (0, 0, 0)
    assert summary.n_samples == len(rows) == 8


def test_unpaired_sets_raise(plans):
    with pytest.raises(ValueError):
        mse_t(plans[:3], plans[:2])


def _plan(rooms):
    return Floorplan(RoomPolygon(tuple(BND), True), tuple(make_room(v, t) for v, t in rooms))


def test_type_count_error():
    a = _plan([(rect(0, 0, 5, 10), 0), (rect(5, 0, 5, 10), 1)])
    b = _plan([(rect(0, 0, 5, 10), 0), (rect(5, 0, 5, 10), 2)])
    assert type_counts(a)[:3].tolist() == [1, 1, 0]
    assert mse_t([a], [b]) == 2


def test_adjacency_threshold():
    a = _plan([(rect(0, 0, 5, 10), 0), (rect(5, 0, 5, 10), 1)])
    assert adjacency_matrix(a)[0, 1]
    touching = _plan([(rect(0, 0, 5, 5), 0), (rect(5, 5, 5, 5), 1)])
    assert not adjacency_matrix(touching)[0, 1]
    c = _plan([(rect(0, 0, 5, 10), 0), (rect(5, 0, 5, 10), 2)])
    assert mse_a([a], [c]) == 2


def test_size_error_units():
    a = _plan([(rect(0, 0, 10, 10), 0)])
    b = _plan([(rect(0, 0, 10, 5), 0)])
    assert size_error(a, b) == pytest.approx(0.25)  # (1.0 - 0.5)^2
    assert mse_s([a], [b]) == pytest.approx(0.25)


def test_summary_csv_layout(plans):
    summary, rows = evaluate(plans[:2], plans[:2], ids=["a", "b"])
    lines = summary_csv(summary, rows).splitlines()
    assert lines[0].startswith("# metrics_version=")
    assert lines[2].startswith("a,") and lines[3].startswith("b,")
    assert lines[-1].startswith("2,")


def test_plan_areas_strict_default(plans):
    r = plan_areas(plans[0])
    assert r.gap_area == 0 and not r.approximate
