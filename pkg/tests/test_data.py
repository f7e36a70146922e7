import numpy as np
import pytest

from oracles import cell_mask
from vecplan.core import LIVING, serialize, validate
from vecplan.data import (
    TRANSFORMS,
    SynthParams,
    augment,
    augment_all,
    read_dataset,
    split_dataset,
    synth_boundary,
    synth_dataset,
    synth_floorplan,
    write_dataset,
)
from vecplan.geometry import is_rectilinear, polygon_area, signed_area2, simplicity_problem


@pytest.fixture(scope="module")
def plans():
    return synth_dataset(30, SynthParams(seed=3))


@pytest.mark.parametrize("notches", [0, 1, 2, 3])
def test_boundary_shape(notches):
    rng = np.random.default_rng(notches)
    b = synth_boundary(rng, notches)
    v = b.vertices
    assert len(v) == 4 + 2 * notches
    assert simplicity_problem(v) is None and signed_area2(v) < 0 and is_rectilinear(v)
    edges = [abs(v[i][0] - v[i - 1][0]) + abs(v[i][1] - v[i - 1][1]) for i in range(len(v))]
    assert min(edges) >= 2


def test_plans_partition_boundary(plans):
    for fp in plans:
        rep = validate(fp)
        assert rep.ok and not rep.warnings, rep
        b = cell_mask(fp.boundary.vertices)
        count = sum(cell_mask(r.polygon.vertices).astype(int) for r in fp.rooms)
        assert (count <= 1).all()
        assert ((count == 1) == b).all()


def test_living_room_rules(plans):
    for fp in plans:
        living = [r for r in fp.rooms if r.type == LIVING]
        assert len(living) == 1 and fp.rooms[0].type == LIVING
        areas = [polygon_area(r.polygon.vertices) for r in fp.rooms]
        assert areas[0] == max(areas)
        # the door edge lies on the living room outline
        (x0, y0), (x1, y1) = fp.boundary.vertices[:2]
        mid = ((x0 + x1) / 2, (y0 + y1) / 2)
        lv = living[0].polygon.vertices
        on = False
        for i in range(len(lv)):
            (a, b), (c, d) = lv[i - 1], lv[i]
            if min(a, c) <= mid[0] <= max(a, c) and min(b, d) <= mid[1] <= max(b, d):
                on = True
        assert on


def test_room_extent_and_count(plans):
    for fp in plans:
        assert 3 <= len(fp.rooms) <= 8
        for r in fp.rooms:
            assert r.box.w >= 4 and r.box.h >= 4


def test_same_seed_same_bytes():
    a = synth_dataset(5, SynthParams(seed=11))
    b = synth_dataset(5, SynthParams(seed=11))
    assert [serialize(x) for x in a] == [serialize(x) for x in b]
    c = synth_dataset(5, SynthParams(seed=12))
    assert [serialize(x) for x in a] != [serialize(x) for x in c]


def test_infeasible_params_rejected():
    with pytest.raises(ValueError):
        SynthParams(room_count_range=(5, 2))
    with pytest.raises(ValueError):
        SynthParams(min_room_extent=1)


@pytest.mark.parametrize("t", TRANSFORMS)
def test_augment_preserves_validity_and_areas(plans, t):
    for fp in plans[:10]:
        out = augment(fp, t)
        assert validate(out).ok
        assert sorted(polygon_area(r.polygon.vertices) for r in out.rooms) == sorted(
            polygon_area(r.polygon.vertices) for r in fp.rooms
        )
        assert polygon_area(out.boundary.vertices) == polygon_area(fp.boundary.vertices)


def test_rot90_four_times_is_identity(plans):
    fp = plans[0]
    out = fp
    for _ in range(4):
        out = augment(out, "rot90")
    assert out == fp


def test_augment_all_count(plans):
    assert len(augment_all(plans[:4])) == 24


def test_split_sizes_and_disjointness():
    items = list(range(1000))
    s = split_dataset(items, seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (800, 100, 100)
    assert sorted(s.train + s.val + s.test) == items
    with pytest.raises(ValueError):
        split_dataset(items[:9], seed=0)


def test_dataset_roundtrip(tmp_path, plans):
    split = split_dataset(plans[:20], seed=1)
    write_dataset(tmp_path, split)
    back = read_dataset(tmp_path)
    assert back.train == split.train and back.val == split.val and back.test == split.test
    lines = (tmp_path / "manifest.csv").read_text().splitlines()
    assert lines[0] == "path,split" and len(lines) == 21
