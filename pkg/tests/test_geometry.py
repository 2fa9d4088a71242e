import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scenestage.geometry import (
    Box3D,
    Camera,
    LayoutError,
    Vec3,
    apply_translation,
    box_corners,
    check_in_bounds,
    default_camera,
    make_scene,
    scene_from_json,
    scene_to_json,
)


def unit_box(center=(0.0, 0.0, 0.0), yaw=0.0):
    return Box3D(id="b", center=Vec3(*center), size=(1.0, 1.0, 1.0), yaw=yaw)


# --- construction / validation ------------------------------------------------


def test_make_scene_has_floor_plane():
    scene = make_scene((4, 3, 6), default_camera())
    normals = [p.normal.to_list() for p in scene.planes]
    assert [0.0, 1.0, 0.0] in normals
    assert len(scene.planes) == 5
    assert scene.boxes == ()


def test_make_scene_without_ceiling():
    scene = make_scene((4, 3, 6), default_camera(), include_ceiling=False)
    assert len(scene.planes) == 4
    assert [0.0, -1.0, 0.0] not in [p.normal.to_list() for p in scene.planes]


def test_make_scene_rejects_zero_extent():
    with pytest.raises(LayoutError):
        make_scene((0, 3, 6), default_camera())


def test_scene_json_round_trip():
    scene = make_scene((4, 3, 6), default_camera()).with_box(
        Box3D(id="sofa", center=Vec3(0.5, 0.5, 3.0), size=(2.0, 0.9, 0.8), yaw=0.3)
    )
    again = scene_from_json(scene_to_json(scene))
    assert again == scene


def test_scene_from_json_rejects_garbage():
    with pytest.raises(LayoutError):
        scene_from_json("not json at all {")
    with pytest.raises(LayoutError):
        scene_from_json("{\"room\": {}}")


def test_camera_validation():
    with pytest.raises(LayoutError):
        Camera(focal_px=-1.0)
    with pytest.raises(LayoutError):
        Camera(principal_point=(600.0, 10.0))
    with pytest.raises(LayoutError):
        Camera(width=4, height=4)


def test_box_validation():
    with pytest.raises(LayoutError):
        Box3D(id="x", center=Vec3(), size=(1.0, 0.0, 1.0))
    with pytest.raises(LayoutError):
        Vec3(math.nan, 0, 0)


def test_duplicate_box_ids_rejected():
    scene = make_scene((4, 3, 6), default_camera())
    scene = scene.with_box(unit_box((0, 1, 3)))
    with pytest.raises(LayoutError):
        scene.with_box(unit_box((1, 1, 3)))


def test_box_center_outside_room_rejected():
    scene = make_scene((4, 3, 6), default_camera())
    with pytest.raises(LayoutError):
        scene.with_box(Box3D(id="far", center=Vec3(0, 1, 99), size=(1, 1, 1)))


def test_yaw_wraps_into_half_open_interval():
    assert unit_box(yaw=math.pi).yaw == -math.pi
    assert unit_box(yaw=3 * math.pi).yaw == pytest.approx(-math.pi)
    assert unit_box(yaw=0.25).yaw == 0.25
    b = unit_box(yaw=-math.pi)
    assert -math.pi <= b.yaw < math.pi


# --- box_corners --------------------------------------------------------------


def test_corners_unit_box_no_yaw():
    got = {tuple(c.to_list()) for c in box_corners(unit_box())}
    want = {(sx * 0.5, sy * 0.5, sz * 0.5) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
    assert got == want


def test_corner_ordering_first_is_all_negative():
    corners = box_corners(unit_box())
    assert corners[0].to_list() == [-0.5, -0.5, -0.5]
    assert corners[1].to_list() == [0.5, -0.5, -0.5]  # bit 0 flips x
    assert corners[2].to_list() == [-0.5, 0.5, -0.5]  # bit 1 flips y
    assert corners[4].to_list() == [-0.5, -0.5, 0.5]  # bit 2 flips z


def _assert_same_corner_set(box_a, box_b, tol):
    """Greedy nearest matching; corners of a valid box are well separated, so
    the matching is unambiguous whenever the sets agree to tol."""
    a = np.array([c.to_list() for c in box_corners(box_a)])
    b = np.array([c.to_list() for c in box_corners(box_b)])
    used = set()
    for row in a:
        dists = np.linalg.norm(b - row, axis=1)
        j = int(np.argmin(dists))
        assert dists[j] < tol and j not in used
        used.add(j)


def test_corner_set_invariant_under_half_turn():
    _assert_same_corner_set(unit_box(yaw=0.0), unit_box(yaw=math.pi), 1e-12)


def test_corner_quarter_turn():
    # Positive yaw turns +x toward +z: local (0.5,-0.5,-0.5) lands at
    # (0.5,-0.5,0.5) for yaw pi/2 (hand rotation matrix about y).
    corners = box_corners(unit_box(yaw=math.pi / 2))
    moved = corners[1].to_list()  # local (+x, -y, -z) corner
    np.testing.assert_allclose(moved, [0.5, -0.5, 0.5], atol=1e-12)


@given(
    yaw=st.floats(-3.0, 3.0),
    cx=st.floats(-2.0, 2.0),
    cy=st.floats(0.0, 3.0),
    sx=st.floats(0.1, 2.0),
    sy=st.floats(0.1, 2.0),
    sz=st.floats(0.1, 2.0),
)
def test_corner_centroid_is_center(yaw, cx, cy, sx, sy, sz):
    box = Box3D(id="b", center=Vec3(cx, cy, 3.0), size=(sx, sy, sz), yaw=yaw)
    centroid = np.mean([c.to_list() for c in box_corners(box)], axis=0)
    np.testing.assert_allclose(centroid, box.center.to_list(), atol=1e-12)


@given(yaw=st.floats(-3.0, 3.0), s=st.floats(0.1, 2.0), sy=st.floats(0.1, 2.0))
def test_square_footprint_half_turn_symmetry(yaw, s, sy):
    _assert_same_corner_set(
        Box3D(id="b", center=Vec3(), size=(s, sy, s), yaw=yaw),
        Box3D(id="b", center=Vec3(), size=(s, sy, s), yaw=yaw + math.pi),
        1e-9,
    )


# --- apply_translation --------------------------------------------------------


def test_translation_identity():
    b = unit_box((0, 0, 3))
    assert apply_translation(b, Vec3(0, 0, 0)) == b


def test_translation_additivity():
    b = unit_box((0, 0, 3))
    twice = apply_translation(apply_translation(b, Vec3(1, 0, 0)), Vec3(1, 0, 0))
    once = apply_translation(b, Vec3(2, 0, 0))
    assert twice == once


def test_translation_example():
    b = unit_box((0, 0, 3))
    moved = apply_translation(b, Vec3(-1, 0, 2))
    assert moved.center == Vec3(-1, 0, 5)
    assert moved.size == b.size and moved.yaw == b.yaw and moved.id == b.id


# Dyadic rationals k/2^10 with |k| <= 2^20: sums and differences of any two are
# exact in double precision, so round-tripping a translation is genuinely
# bitwise.  (For arbitrary floats (c+t)-t may round; exact inversion is a
# statement about the fields, so we test it where float addition is exact.)
_dyadic = st.integers(-(2**20), 2**20).map(lambda k: k / 1024.0)


@given(c=st.tuples(_dyadic, _dyadic, _dyadic), t=st.tuples(_dyadic, _dyadic, _dyadic))
def test_translation_bitwise_invertible_on_dyadics(c, t):
    b = unit_box(center=c)
    back = apply_translation(apply_translation(b, Vec3(*t)), -Vec3(*t))
    assert back == b


# --- check_in_bounds ----------------------------------------------------------


def test_in_bounds_center_of_room():
    scene = make_scene((4, 3, 6), default_camera())
    assert check_in_bounds(scene, unit_box((0, 1.5, 3)))


def test_out_of_bounds_past_wall():
    scene = make_scene((4, 3, 6), default_camera())
    box = Box3D(id="b", center=Vec3(2.0 - 0.5 + 0.1, 1.5, 3.0), size=(1, 1, 1))
    assert not check_in_bounds(scene, box)


def test_bounds_are_closed_on_contact():
    scene = make_scene((4, 3, 6), default_camera())
    touching = Box3D(id="b", center=Vec3(1.5, 1.5, 3.0), size=(1, 1, 1))  # corner x = 2.0
    assert check_in_bounds(scene, touching)


@given(
    shrink=st.floats(0.01, 0.99),
    cx=st.floats(-1.0, 1.0),
    cy=st.floats(0.5, 2.5),
    cz=st.floats(0.5, 5.5),
    yaw=st.floats(-3.0, 3.0),
)
def test_in_bounds_monotone_under_shrinking(shrink, cx, cy, cz, yaw):
    scene = make_scene((4, 3, 6), default_camera())
    box = Box3D(id="b", center=Vec3(cx, cy, cz), size=(1.0, 1.0, 1.0), yaw=yaw)
    if check_in_bounds(scene, box):
        smaller = Box3D(id="b", center=box.center, size=(shrink, shrink, shrink), yaw=yaw)
        assert check_in_bounds(scene, smaller)
