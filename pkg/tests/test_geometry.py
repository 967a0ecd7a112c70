import math

import pytest
from hypothesis import given, strategies as st

from rncover.geometry import (Box, GeometryError, SceneBounds, clamp_center_to_scene, contains,
                              normalize_box)

S = SceneBounds(100, 100)


@pytest.mark.parametrize("box, expected", [
    ((50, 50, 10, 20), (0.0, 0.0, 0.1, 0.2)),
    ((0, 0, 10, 10), (-1.0, -1.0, 0.1, 0.1)),
    ((75, 25, 200, 10), (0.5, -0.5, 1.0, 0.1)),
])
def test_normalize_box(box, expected):
    assert normalize_box(Box(*box), S).as_tuple() == pytest.approx(expected, abs=1e-15)


def test_normalize_clamps_outside_centers():
    n = normalize_box(Box(-30, 130, 5, 5), S)
    assert (n.nx, n.ny) == (-1.0, 1.0)


def test_invalid_geometry():
    with pytest.raises(GeometryError):
        Box(math.nan, 0, 1, 1)
    with pytest.raises(GeometryError):
        Box(0, 0, 0, 1)
    with pytest.raises(GeometryError):
        SceneBounds(0, 1)
    with pytest.raises(GeometryError):
        clamp_center_to_scene(Box(50, 50, 101, 10), S)


@pytest.mark.parametrize("inner, expected", [
    ((50, 50, 10, 10), True),
    ((62, 50, 10, 10), False),
    ((50, 50, 20, 20), True),
])
def test_contains(inner, expected):
    assert contains(Box(50, 50, 20, 20), Box(*inner)) is expected


@pytest.mark.parametrize("box, expected", [
    ((-5, 50, 10, 10), (5, 50, 10, 10)),
    ((50, 50, 10, 10), (50, 50, 10, 10)),
    ((99, 99, 10, 10), (95, 95, 10, 10)),
])
def test_clamp(box, expected):
    assert clamp_center_to_scene(Box(*box), S).as_tuple() == expected


coord = st.floats(-2, 2, allow_nan=False)
size = st.floats(0.01, 1.0, allow_nan=False)
boxes = st.builds(Box, coord, coord, size, size)


@given(boxes)
def test_contains_reflexive(a):
    assert contains(a, a)


@given(boxes, boxes, boxes)
def test_contains_transitive(a, b, c):
    if contains(a, b) and contains(b, c):
        assert contains(a, c)


@given(boxes)
def test_clamp_idempotent_and_confined(b):
    scene = SceneBounds(1.0, 1.0)
    once = clamp_center_to_scene(b, scene)
    assert clamp_center_to_scene(once, scene) == once
    assert contains(scene.as_box(), once)


@given(coord, coord, st.floats(0, 1))
def test_normalize_monotone(x, dx, y):
    scene = SceneBounds(1.0, 1.0)
    lo = normalize_box(Box(x, y, 0.1, 0.1), scene)
    hi = normalize_box(Box(x + abs(dx), y, 0.1, 0.1), scene)
    assert hi.nx >= lo.nx
