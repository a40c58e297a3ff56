import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnntrack.core import (Box2D, Box3D, Detection, NotProjectableError, Tracklet, AssociationProblem,
                           Assignment, center_distance, iou2d, iou2d_matrix, iou3d, iou3d_matrix,
                           project_box, wrap_angle)

from oracles import mc_iou3d

coord = st.floats(-10, 10, allow_nan=False)
extent = st.floats(0.2, 5.0, allow_nan=False)
angle = st.floats(-10.0, 10.0, allow_nan=False)


@st.composite
def boxes3d(draw):
    return Box3D((draw(coord), draw(st.floats(-1, 1)), draw(coord)),
                 (draw(extent), draw(extent), draw(extent)), draw(angle))


@st.composite
def boxes2d(draw):
    l, t = draw(coord), draw(coord)
    return Box2D(l, t, l + draw(extent), t + draw(extent))


def test_wrap_angle_range():
    for a in (-math.pi, math.pi, 3 * math.pi, -7.5, 0.0, 1e-17, math.pi - 1e-15):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)
    assert wrap_angle(math.pi) == -math.pi


def test_box_validation():
    with pytest.raises(ValueError):
        Box3D((0, 0, 0), (1, -1, 1), 0)
    with pytest.raises(ValueError):
        Box3D((0, float("nan"), 0), (1, 1, 1), 0)
    with pytest.raises(ValueError):
        Box2D(2, 0, 1, 1)
    with pytest.raises(ValueError):
        Detection(0, Box3D((0, 0, 5), (1, 1, 1), 0), Box2D(0, 0, 1, 1), score=1.5)


def test_tracklet_history_must_increase():
    tr = Tracklet(1)
    b3, b2 = Box3D((0, 0, 5), (1, 1, 1), 0), Box2D(0, 0, 1, 1)
    tr.append(3, b3, b2)
    with pytest.raises(ValueError):
        tr.append(3, b3, b2)


def test_association_problem_checks_frames():
    d = Detection(2, Box3D((0, 0, 5), (1, 1, 1), 0), Box2D(0, 0, 1, 1))
    assert AssociationProblem([], [d], 1).N == 1
    with pytest.raises(ValueError):
        AssociationProblem([], [d], 0)


def test_assignment_validate():
    Assignment([(0, 1)], [1], [0]).validate(2, 2)
    with pytest.raises(AssertionError):
        Assignment([(0, 1), (1, 1)], [], [0]).validate(2, 2)


def test_iou2d_examples():
    a = Box2D(0, 0, 2, 2)
    assert iou2d(a, a) == 1.0
    assert iou2d(a, Box2D(5, 5, 6, 6)) == 0.0
    assert iou2d(a, Box2D(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


@given(boxes2d(), boxes2d())
def test_iou2d_symmetric_bounded(a, b):
    v = iou2d(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou2d(b, a)


def test_iou2d_matrix_matches_scalar():
    A = [Box2D(0, 0, 2, 2), Box2D(1, 0, 4, 3)]
    B = [Box2D(1, 1, 3, 3), Box2D(0, 0, 2, 2), Box2D(9, 9, 10, 10)]
    M = iou2d_matrix(A, B)
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            assert M[i, j] == pytest.approx(iou2d(a, b), abs=1e-12)


def test_iou3d_identity_and_full_turn():
    b = Box3D((1.0, 1.6, 20.0), (1.5, 1.6, 3.9), 0.7)
    assert iou3d(b, b) == pytest.approx(1.0, abs=1e-12)
    assert iou3d(b, Box3D(b.center, b.dims, 0.7 + 2 * math.pi)) == pytest.approx(1.0, abs=1e-12)


def test_iou3d_unit_cube_offset():
    a = Box3D((0, 0, 0), (1, 1, 1), 0)
    b = Box3D((0.5, 0, 0), (1, 1, 1), 0)
    assert abs(iou3d(a, b) - 1 / 3) <= 1e-9


def test_iou3d_vertical_only_overlap():
    a = Box3D((0, 0, 0), (2, 1, 1), 0)
    b = Box3D((0, 1, 0), (2, 1, 1), 0)  # spans [-1, 1] vs [-2, 0]
    assert iou3d(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert iou3d(a, Box3D((0, 5, 0), (2, 1, 1), 0)) == 0.0


def test_iou3d_disjoint_and_touching():
    a = Box3D((0, 0, 0), (1, 1, 1), 0)
    assert iou3d(a, a.translated(1.0, 0, 0)) == 0.0
    assert iou3d(a, a.translated(3.0, 0, 3.0)) == 0.0


def test_iou3d_rotated_square_in_square():
    # a unit square rotated 45 degrees inside a larger axis-aligned square
    a = Box3D((0, 0, 0), (1, 2, 2), 0)
    b = Box3D((0, 0, 0), (1, 1, 1), math.pi / 4)
    assert iou3d(a, b) == pytest.approx(1 / 4, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(boxes3d(), boxes3d())
def test_iou3d_symmetric_bounded(a, b):
    v = iou3d(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(iou3d(b, a), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(boxes3d(), extent, extent, st.floats(-math.pi, math.pi), coord, coord)
def test_iou3d_rigid_invariance(a, dx, dz, theta, tx, tz):
    b = Box3D((a.center[0] + dx - 2.5, a.center[1], a.center[2] + dz - 2.5), (1.5, 1.6, 3.9), a.yaw + 0.3)

    def move(box):
        x, y, z = box.center
        c, s = math.cos(theta), math.sin(theta)
        # rotation about the vertical axis, matching the yaw convention of Box3D.corners
        return Box3D((c * x + s * z + tx, y, -s * x + c * z + tz), box.dims, box.yaw + theta)

    assert iou3d(move(a), move(b)) == pytest.approx(iou3d(a, b), abs=1e-6)


@given(boxes3d(), boxes3d(), st.integers(-3, 3))
def test_yaw_normalization_is_transparent(a, b, k):
    shifted = Box3D(a.center, a.dims, a.yaw + 2 * math.pi * k)
    assert iou3d(shifted, b) == pytest.approx(iou3d(a, b), abs=1e-9)


def test_iou3d_matrix_matches_scalar():
    rng = np.random.default_rng(3)
    A = [Box3D((rng.uniform(-2, 2), 0, rng.uniform(-2, 2)), (1.5, 1.6, 3.9), rng.uniform(-3, 3)) for _ in range(4)]
    B = [Box3D((rng.uniform(-2, 2), 0, rng.uniform(-2, 2)), (1.5, 1.7, 4.2), rng.uniform(-3, 3)) for _ in range(3)]
    M = iou3d_matrix(A, B)
    assert M.shape == (4, 3)
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            assert M[i, j] == pytest.approx(iou3d(a, b), abs=1e-12)
    assert iou3d_matrix([], B).shape == (0, 3)


def test_iou3d_against_monte_carlo():
    rng = np.random.default_rng(11)
    for k in range(5):
        a = Box3D((0, 0, 0), tuple(rng.uniform(0.5, 3, 3)), rng.uniform(-math.pi, math.pi))
        b = Box3D(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(0.5, 3, 3)), rng.uniform(-math.pi, math.pi))
        assert abs(iou3d(a, b) - mc_iou3d(a, b, 400_000, seed=k)) <= 0.01


def test_center_distance():
    assert center_distance(Box3D((0, 0, 0), (1, 1, 1), 0), Box3D((3, 0, 4), (1, 1, 1), 0)) == 5.0


P = np.array([[100.0, 0, 50, 0], [0, 100, 50, 0], [0, 0, 1, 0]])


def test_project_degenerate_box():
    b = project_box(Box3D((0, 0, 10), (0, 0, 0), 0), P)
    assert (b.left, b.top, b.right, b.bottom) == pytest.approx((50, 50, 50, 50))


def test_project_translation_parallel_to_image():
    point = Box3D((0.0, 0.0, 10.0), (0.0, 0.0, 0.0), 0.0)
    for dx, dy in ((1.0, 0.5), (-2.0, 0.25)):
        s = project_box(point.translated(dx, dy, 0.0), P)
        assert (s.left - 50, s.top - 50) == pytest.approx((100 * dx / 10, 100 * dy / 10))
    # a box facing the camera (all corners at one depth) shifts rigidly
    face = Box3D((0.0, 1.0, 10.0), (1.0, 2.0, 0.0), math.pi / 2)
    a, b = project_box(face, P), project_box(face.translated(0.4, 0.0, 0.0), P)
    assert (b.left - a.left, b.right - a.right) == pytest.approx((4.0, 4.0))


def test_project_behind_camera():
    with pytest.raises(NotProjectableError):
        project_box(Box3D((0, 0, -5), (1, 1, 1), 0), P)
    with pytest.raises(NotProjectableError):
        project_box(Box3D((0, 0, 1.0), (1, 1, 4), math.pi / 2), P)
