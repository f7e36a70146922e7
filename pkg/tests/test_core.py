import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vecplan.core import (
    Floorplan,
    ParseError,
    RoomPolygon,
    ValidationError,
    canonical_start,
    dequantize_coord,
    deserialize,
    encode_front_door,
    insert_door_vertices,
    make_room,
    order_rooms,
    orient_clockwise,
    quantize_coord,
    rescale_coord,
    serialize,
    structural_problems,
    validate,
)
from vecplan.geometry import GeometryError, signed_area2

SQUARE_CW = ((0, 0), (0, 10), (10, 10), (10, 0))


def simple_plan():
    bnd, door = insert_door_vertices(RoomPolygon(SQUARE_CW), (0, 2), (0, 5))
    bnd = encode_front_door(bnd, door)
    rooms = [make_room(((0, 0), (0, 10), (6, 10), (6, 0)), 0), make_room(((6, 0), (6, 10), (10, 10), (10, 0)), 1)]
    return Floorplan(bnd, tuple(order_rooms(rooms)))


@pytest.mark.parametrize("v,bits,g", [(0.0, 6, 0), (1.0, 6, 63), (0.5, 6, 32), (0.999, 5, 31), (0.25, 7, 32)])
def test_quantize_examples(v, bits, g):
    assert quantize_coord(v, bits) == g


@pytest.mark.parametrize("v,bits", [(-0.01, 6), (1.01, 6), (0.5, 8), (0.5, 4)])
def test_quantize_rejects(v, bits):
    with pytest.raises(ValueError):
        quantize_coord(v, bits)


@given(st.integers(0, 63))
def test_dequantize_is_bin_midpoint(g):
    v = dequantize_coord(g, 6)
    assert quantize_coord(v, 6) == g
    assert v == pytest.approx((g + 0.5) / 64)


@given(st.integers(0, 63))
def test_rescale_roundtrip(g):
    assert rescale_coord(rescale_coord(g, 6, 7), 7, 6) == g


def test_order_rooms_example():
    bed = make_room(((10, 5), (10, 9), (14, 9), (14, 5)), 1)
    liv = make_room(((30, 40), (30, 44), (34, 44), (34, 40)), 0)
    kit = make_room(((10, 2), (10, 4), (14, 4), (14, 2)), 3)
    assert [r.type for r in order_rooms([bed, liv, kit])] == [0, 3, 1]


def test_order_rooms_two_living():
    a = make_room(SQUARE_CW, 0)
    with pytest.raises(ValidationError):
        order_rooms([a, a])


def test_orient_clockwise_keeps_start_vertex():
    ccw = RoomPolygon(((0, 0), (10, 0), (10, 10), (0, 10)))
    cw = orient_clockwise(ccw)
    assert cw.vertices[0] == (0, 0)
    assert signed_area2(cw.vertices) < 0
    assert orient_clockwise(cw) == cw


def test_orient_rejects_bowtie():
    with pytest.raises(GeometryError):
        orient_clockwise(RoomPolygon(((0, 0), (4, 4), (4, 0), (0, 4))))


def test_front_door_rotation():
    bnd = RoomPolygon(SQUARE_CW)
    out = encode_front_door(bnd, (2, 3))
    assert out.vertices[:2] == (SQUARE_CW[2], SQUARE_CW[3])
    assert out.door_encoded
    with pytest.raises(ValueError):
        encode_front_door(bnd, (0, 2))


def test_canonical_start():
    out = canonical_start(RoomPolygon(((9, 9), (9, 1), (1, 1), (1, 9))))
    assert out.vertices == ((1, 1), (1, 9), (9, 9), (9, 1))


def test_validate_clean_plan():
    rep = validate(simple_plan())
    assert rep.ok and not rep.warnings
    assert structural_problems(simple_plan()) == []


def test_validate_reports_without_raising():
    fp = simple_plan()
    bad = Floorplan(RoomPolygon(fp.boundary.vertices), (make_room(((0, 0), (4, 4), (4, 0), (0, 4)), 1),))
    rep = validate(bad)
    assert not rep.ok
    assert any("front door" in v for v in rep.violations)
    assert any("not simple" in v for v in rep.violations)
    assert any("living" in w for w in rep.warnings)


def test_roundtrip_serialization():
    fp = simple_plan()
    text = serialize(fp)
    assert deserialize(text) == fp
    assert serialize(deserialize(text)) == text


def test_parse_error_names_field():
    doc = json.loads(serialize(simple_plan()))
    doc["rooms"][1]["vertices"][2] = [3.5, 2]
    with pytest.raises(ParseError, match=r"rooms\[1\]\.vertices\[2\]"):
        deserialize(json.dumps(doc))


def test_parse_error_line_column():
    with pytest.raises(ParseError, match="line 2"):
        deserialize('{\n "boundary": ,}')


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("boundary"),
    lambda d: d["boundary"]["vertices"][0].__setitem__(0, 64),
    lambda d: d["rooms"][0].__setitem__("type", "garage"),
    lambda d: d["rooms"][0].__setitem__("box", [0, 0, 1, 1]),
    lambda d: d["boundary"].__setitem__("door", [0, 2]),
])
def test_parse_rejects(mutate):
    doc = json.loads(serialize(simple_plan()))
    mutate(doc)
    with pytest.raises(ParseError):
        deserialize(json.dumps(doc))


def test_door_given_elsewhere_is_rotated():
    fp = simple_plan()
    doc = json.loads(serialize(fp))
    n = len(doc["boundary"]["vertices"])
    doc["boundary"]["vertices"] = doc["boundary"]["vertices"][2:] + doc["boundary"]["vertices"][:2]
    doc["boundary"]["door"] = [n - 2, n - 1]
    assert deserialize(json.dumps(doc)).boundary == fp.boundary
