import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obbmine.errors import UsageError
from obbmine.geometry import (
    RotatedBox,
    iou_matrix,
    mc_rotated_iou,
    nms,
    normalize_angle,
    pixels_inside,
    rotated_iou,
)

from _oracles import greedy_nms_reference, polygon_pixel_count


def _vertex_set(box, ndigits=9):
    return {(round(float(x), ndigits), round(float(y), ndigits)) for x, y in box.corners()}


# ---------------------------------------------------------------- construction


def test_angle_normalization_quarter_turn():
    b = RotatedBox(0, 0, 2, 4, math.pi / 2)
    assert (b.w, b.h) == (4.0, 2.0)
    assert b.theta == pytest.approx(0.0, abs=1e-12)


def test_angle_normalization_half_turn_identity():
    b = RotatedBox(1, 2, 3, 1, math.pi)
    assert (b.w, b.h) == (3.0, 1.0)
    assert b.theta == pytest.approx(0.0, abs=1e-12)


def test_angle_normalization_small_angle_untouched():
    b = RotatedBox(0, 0, 3, 1, 0.3)
    assert (b.w, b.h, b.theta) == (3.0, 1.0, 0.3)


def test_angle_normalization_boundary_lands_canonical():
    w, h, t = normalize_angle(2.0, 3.0, math.pi / 4)
    assert (w, h) == (3.0, 2.0)
    assert t == pytest.approx(-math.pi / 4)
    # the same physical rectangle constructed either way collapses to one form
    assert _vertex_set(RotatedBox(0, 0, 2, 3, math.pi / 4)) == _vertex_set(
        RotatedBox(0, 0, 3, 2, -math.pi / 4)
    )


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(cx=0, cy=0, w=0, h=1, theta=0),
        dict(cx=0, cy=0, w=1, h=-2, theta=0),
        dict(cx=float("nan"), cy=0, w=1, h=1, theta=0),
        dict(cx=0, cy=float("inf"), w=1, h=1, theta=0),
        dict(cx=0, cy=0, w=1, h=1, theta=90.0),  # degrees, not radians
    ],
)
def test_invalid_boxes_rejected(kwargs):
    with pytest.raises(ValueError):
        RotatedBox(**kwargs)


def test_array_roundtrip():
    b = RotatedBox(3.5, -1.25, 4.0, 2.0, 0.7)
    assert RotatedBox.from_array(b.to_array()) == b


# -------------------------------------------------------------------- corners


def test_corners_axis_aligned():
    got = _vertex_set(RotatedBox(0, 0, 2, 2, 0))
    assert got == {(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)}


def test_corners_quarter_turn_same_vertices():
    assert _vertex_set(RotatedBox(0, 0, 2, 4, math.pi / 2)) == _vertex_set(
        RotatedBox(0, 0, 4, 2, 0)
    )


def test_corners_diagonal_square():
    # 2x2 square at 45 degrees: vertices sqrt(2) from center along the axes
    cs = RotatedBox(5, 5, 2, 2, math.pi / 4).corners()
    d = np.hypot(cs[:, 0] - 5, cs[:, 1] - 5)
    np.testing.assert_allclose(d, math.sqrt(2), atol=1e-12)
    on_axis = np.isclose(cs[:, 0], 5, atol=1e-12) | np.isclose(cs[:, 1], 5, atol=1e-12)
    assert on_axis.all()


def test_corners_centroid_matches_center():
    rng = np.random.default_rng(3)
    for _ in range(50):
        b = RotatedBox(
            rng.uniform(-50, 50), rng.uniform(-50, 50),
            rng.uniform(0.1, 40), rng.uniform(0.1, 40), rng.uniform(-6, 6),
        )
        c = b.corners().mean(axis=0)
        np.testing.assert_allclose(c, [b.cx, b.cy], atol=1e-9)


# ------------------------------------------------------------------------ IoU


def test_iou_identity():
    b = RotatedBox(3, 4, 5, 2, 0.6)
    assert rotated_iou(b, b) == pytest.approx(1.0, abs=1e-12)


def test_iou_disjoint():
    assert rotated_iou(RotatedBox(0, 0, 2, 2, 0), RotatedBox(10, 10, 2, 2, 0.5)) == 0.0


def test_iou_shifted_squares_exact_third():
    # 2x2 squares centered at (0,0) and (1,0): inter 2, union 6
    a = RotatedBox(0, 0, 2, 2, 0)
    b = RotatedBox(1, 0, 2, 2, 0)
    assert rotated_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_perpendicular_cross():
    # two 1x5 bars crossing at right angles through one center: inter 1, union 9
    a = RotatedBox(0, 0, 5, 1, 0)
    b = RotatedBox(0, 0, 5, 1, math.pi / 2)
    assert rotated_iou(a, b) == pytest.approx(1 / 9, abs=1e-12)


def test_iou_containment():
    inner = RotatedBox(0, 0, 2, 2, 0)
    outer = RotatedBox(0, 0, 4, 4, 0)
    assert rotated_iou(inner, outer) == pytest.approx(0.25, abs=1e-12)


def test_iou_symmetry_and_range_bulk():
    rng = np.random.default_rng(11)
    from obbmine.backend import get_kernels

    k = get_kernels()
    n = 10_000
    a = np.stack(
        [rng.uniform(0, 80, n), rng.uniform(0, 80, n),
         rng.uniform(0.5, 40, n), rng.uniform(0.5, 40, n), rng.uniform(-1.5, 1.5, n)],
        axis=1,
    )
    b = np.stack(
        [rng.uniform(0, 80, n), rng.uniform(0, 80, n),
         rng.uniform(0.5, 40, n), rng.uniform(0.5, 40, n), rng.uniform(-1.5, 1.5, n)],
        axis=1,
    )
    ab = k.iou_pairs(a, b)
    ba = k.iou_pairs(b, a)
    assert (ab >= 0).all() and (ab <= 1).all()
    np.testing.assert_allclose(ab, ba, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    cx=st.floats(-20, 20), cy=st.floats(-20, 20),
    w1=st.floats(0.5, 20), h1=st.floats(0.5, 20), t1=st.floats(-1.5, 1.5),
    dx=st.floats(-8, 8), dy=st.floats(-8, 8),
    w2=st.floats(0.5, 20), h2=st.floats(0.5, 20), t2=st.floats(-1.5, 1.5),
    shift_x=st.floats(-30, 30), shift_y=st.floats(-30, 30), rot=st.floats(-1.5, 1.5),
)
def test_iou_rigid_motion_invariance(cx, cy, w1, h1, t1, dx, dy, w2, h2, t2,
                                     shift_x, shift_y, rot):
    a = RotatedBox(cx, cy, w1, h1, t1)
    b = RotatedBox(cx + dx, cy + dy, w2, h2, t2)

    def moved(box):
        c, s = math.cos(rot), math.sin(rot)
        nx = box.cx * c - box.cy * s + shift_x
        ny = box.cx * s + box.cy * c + shift_y
        return RotatedBox(nx, ny, box.w, box.h, box.theta + rot)

    assert rotated_iou(moved(a), moved(b)) == pytest.approx(
        rotated_iou(a, b), abs=1e-9
    )


def test_iou_angle_period_invariance():
    rng = np.random.default_rng(21)
    for _ in range(100):
        w, h = rng.uniform(0.5, 20, 2)
        t = rng.uniform(-1.5, 1.5)
        a = RotatedBox(rng.uniform(-10, 10), rng.uniform(-10, 10), w, h, t)
        shifted = RotatedBox(a.cx, a.cy, w, h, t + math.pi if t < 0 else t - math.pi)
        assert _vertex_set(a) == _vertex_set(shifted)
        b = RotatedBox(a.cx + 2, a.cy - 1, 6, 3, 0.4)
        assert rotated_iou(a, b) == pytest.approx(rotated_iou(shifted, b), abs=1e-12)


def test_iou_matches_mc_oracle_sample():
    # quick slice of the full acceptance sweep
    rng = np.random.default_rng(1234)
    for _ in range(100):
        a = RotatedBox(rng.uniform(0, 60), rng.uniform(0, 60),
                       rng.uniform(2, 40), rng.uniform(2, 40), rng.uniform(-1.5, 1.5))
        b = RotatedBox(rng.uniform(0, 60), rng.uniform(0, 60),
                       rng.uniform(2, 40), rng.uniform(2, 40), rng.uniform(-1.5, 1.5))
        assert rotated_iou(a, b) == pytest.approx(
            mc_rotated_iou(a, b, 100_000, rng), abs=0.01
        )


# ------------------------------------------------------------------------ NMS


def test_nms_single_box():
    assert nms([RotatedBox(0, 0, 2, 2, 0)], [0.5], 0.5) == [0]


def test_nms_identical_boxes_keeps_higher_score():
    b = RotatedBox(0, 0, 2, 2, 0)
    assert nms([b, b], [0.8, 0.9], 0.5) == [1]


def test_nms_chain_survivor():
    # A suppresses B (iou 0.6 > 0.5); C survives on A (iou 1/3 <= 0.5) even
    # though C overlapped the suppressed B heavily (iou 0.6).
    a = RotatedBox(0.0, 0, 2, 2, 0)
    b = RotatedBox(0.5, 0, 2, 2, 0)
    c = RotatedBox(1.0, 0, 2, 2, 0)
    assert rotated_iou(a, b) == pytest.approx(0.6, abs=1e-12)
    assert rotated_iou(b, c) == pytest.approx(0.6, abs=1e-12)
    assert rotated_iou(a, c) == pytest.approx(1 / 3, abs=1e-12)
    kept = nms([a, b, c], [0.9, 0.8, 0.7], 0.5)
    assert kept == [0, 2]


def test_nms_tie_breaks_by_lower_index():
    b = RotatedBox(0, 0, 2, 2, 0)
    far = RotatedBox(50, 50, 2, 2, 0)
    assert nms([b, far, b], [0.7, 0.7, 0.7], 0.5) == [0, 1]


def test_nms_matches_reference_on_random_sets():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(1, 40))
        boxes = [
            RotatedBox(rng.uniform(0, 30), rng.uniform(0, 30),
                       rng.uniform(2, 15), rng.uniform(2, 15), rng.uniform(-1.5, 1.5))
            for _ in range(n)
        ]
        scores = rng.uniform(0, 1, n)
        thr = float(rng.uniform(0.2, 0.7))
        expected = greedy_nms_reference(iou_matrix(boxes, boxes), scores, thr)
        assert nms(boxes, scores, thr) == expected


def test_nms_permutation_independent():
    rng = np.random.default_rng(9)
    boxes = [
        RotatedBox(rng.uniform(0, 20), rng.uniform(0, 20),
                   rng.uniform(2, 10), rng.uniform(2, 10), rng.uniform(-1.5, 1.5))
        for _ in range(25)
    ]
    scores = list(rng.permutation(25) / 25.0)  # distinct
    kept = nms(boxes, scores, 0.4)
    kept_scores = sorted(scores[i] for i in kept)
    for _ in range(5):
        perm = rng.permutation(25)
        kept_p = nms([boxes[i] for i in perm], [scores[i] for i in perm], 0.4)
        assert sorted(scores[perm[i]] for i in kept_p) == kept_scores


def test_nms_argument_errors():
    b = RotatedBox(0, 0, 2, 2, 0)
    with pytest.raises(UsageError):
        nms([b, b], [0.5], 0.5)
    with pytest.raises(UsageError):
        nms([b], [0.5], 0.0)


# -------------------------------------------------------------- rasterization


def test_pixels_inside_axis_aligned_exact_cover():
    # box spanning [0,4]x[0,4] covers pixel centers 0.5..3.5 in each axis
    got = pixels_inside(RotatedBox(2, 2, 4, 4, 0), 16, 16)
    assert got.shape == (16, 2)
    assert {(int(x), int(y)) for x, y in got} == {(x, y) for x in range(4) for y in range(4)}


def test_pixels_inside_off_raster():
    assert pixels_inside(RotatedBox(100, 100, 4, 4, 0.3), 16, 16).shape == (0, 2)


def test_pixels_inside_clips_to_raster():
    got = pixels_inside(RotatedBox(0, 0, 8, 8, 0), 16, 16)
    assert {(int(x), int(y)) for x, y in got} == {(x, y) for x in range(4) for y in range(4)}


def test_pixels_inside_diagonal_square_matches_bruteforce():
    # square of diagonal 4 rotated 45 degrees, centered on a pixel center
    box = RotatedBox(8.5, 8.5, 2 * math.sqrt(2), 2 * math.sqrt(2), math.pi / 4)
    got = pixels_inside(box, 17, 17)
    oracle = polygon_pixel_count(box.corners(), 17, 17)
    assert got.shape[0] == oracle == 13  # 1 + 4 + 4 + 4 boundary-inclusive diamond


def test_pixels_inside_matches_bruteforce_random():
    rng = np.random.default_rng(17)
    for _ in range(25):
        box = RotatedBox(rng.uniform(2, 14), rng.uniform(2, 14),
                         rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(-1.5, 1.5))
        got = pixels_inside(box, 16, 16)
        assert got.shape[0] == polygon_pixel_count(box.corners(), 16, 16)


def test_pixels_inside_row_major_order():
    got = pixels_inside(RotatedBox(2, 2, 4, 4, 0), 16, 16)
    keys = [(int(y), int(x)) for x, y in got]
    assert keys == sorted(keys)


# ------------------------------------------------------------------ MC oracle


def test_mc_iou_deterministic_given_rng():
    a = RotatedBox(0, 0, 6, 3, 0.4)
    b = RotatedBox(1, 1, 5, 4, -0.3)
    x = mc_rotated_iou(a, b, 50_000, np.random.default_rng(42))
    y = mc_rotated_iou(a, b, 50_000, np.random.default_rng(42))
    assert x == y


def test_mc_iou_exact_cases():
    a = RotatedBox(0, 0, 4, 4, 0)
    assert mc_rotated_iou(a, a, 10_000, np.random.default_rng(1)) == pytest.approx(1.0)
    far = RotatedBox(100, 100, 4, 4, 0)
    assert mc_rotated_iou(a, far, 10_000, np.random.default_rng(1)) == pytest.approx(0.0)
