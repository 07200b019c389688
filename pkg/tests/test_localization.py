import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gancoloc.localization import (
    Box,
    binarize,
    connected_components,
    localize,
    localize_full,
    read_predictions,
    tight_box,
    write_predictions,
)
from gancoloc.saliency import SaliencyMap
from oracles import enumerate_largest_box, flood_fill_components


def test_binarize_definition():
    m = np.array([[0.1, 0.2], [0.5, 1.0]])
    mask, degenerate = binarize(m, 0.2)
    assert not degenerate
    np.testing.assert_array_equal(mask, [[False, True], [True, True]])


def test_binarize_ratio_one_keeps_argmax():
    m = np.array([[0.3, 1.0], [1.0, 0.99]])
    mask, _ = binarize(m, 1.0)
    np.testing.assert_array_equal(mask, [[False, True], [True, False]])


def test_binarize_matches_elementwise_oracle(rng):
    m = rng.uniform(size=(8, 8))
    mask, _ = binarize(m, 0.5)
    expected = np.array([[m[i, j] >= 0.5 * m.max() for j in range(8)] for i in range(8)])
    np.testing.assert_array_equal(mask, expected)


def test_binarize_degenerate():
    mask, degenerate = binarize(np.zeros((4, 4)), 0.2)
    assert degenerate and not mask.any()
    mask, degenerate = binarize(SaliencyMap(np.zeros((3, 3)), (2.0, 2.0)), 0.2)
    assert degenerate


def test_binarize_rejects_bad_ratio():
    with pytest.raises(ValueError):
        binarize(np.ones((2, 2)), 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)), st.floats(0.01, 1), st.floats(0.01, 1))
def test_binarize_monotone(m, r1, r2):
    lo, hi = min(r1, r2), max(r1, r2)
    a, _ = binarize(m, lo)
    b, _ = binarize(m, hi)
    assert not np.any(b & ~a)


def test_diagonal_pixels_connect():
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    assert len(connected_components(mask)) == 1
    assert len(connected_components(mask, connectivity=4)) == 2


def test_empty_mask():
    assert connected_components(np.zeros((5, 5), bool)) == []


def _as_lists(comps):
    return [sorted(map(tuple, c.tolist())) for c in comps]


def test_components_match_flood_fill(rng):
    for _ in range(100):
        mask = rng.random((16, 16)) < rng.uniform(0.2, 0.7)
        assert _as_lists(connected_components(mask)) == flood_fill_components(mask)
        assert _as_lists(connected_components(mask, 4)) == flood_fill_components(mask, 4)


def test_component_order_is_row_major_first_pixel():
    mask = np.zeros((6, 6), bool)
    mask[0, 5] = mask[1, 4] = mask[2, 3] = mask[3, 2] = True  # starts at (0, 5)
    mask[0, 0] = True  # starts at (0, 0)
    mask[5, 0] = True
    comps = connected_components(mask)
    assert [tuple(c[0]) for c in comps] == [(0, 0), (0, 5), (5, 0)]


def test_localize_blob():
    m = np.zeros((8, 8))
    m[2:5, 2:5] = 1.0
    assert localize(m, 0.2) == Box(2, 2, 5, 5)


def test_localize_two_blobs_largest_area():
    m = np.zeros((12, 12))
    m[1:4, 1:4] = 0.8  # 9 pixels
    m[8:10, 8:10] = 1.0  # 4 pixels, brighter
    assert localize(m, 0.2) == Box(1, 1, 4, 4)
    assert enumerate_largest_box(m >= 0.2) == (1, 1, 4, 4)


def test_localize_box_area_vs_pixel_count():
    m = np.zeros((10, 10))
    for i in range(5):  # diagonal line: 5 pixels, 5x5 box
        m[i, i] = 1.0
    m[6:9, 6:9] = 1.0  # 9 pixels, 3x3 box
    assert localize(m, 0.5) == Box(0, 0, 5, 5)
    assert localize(m, 0.5, criterion="pixel_count") == Box(6, 6, 9, 9)


def test_localize_degenerate_full_image():
    res = localize_full(np.zeros((7, 9)), 0.2)
    assert res.box == Box(0, 0, 9, 7) and res.degenerate


def test_tightness(rng):
    for _ in range(50):
        m = rng.random((16, 16))
        mask, _ = binarize(m, 0.6)
        comps = connected_components(mask)
        box = localize(m, 0.6)
        chosen = [c for c in comps if tight_box(c) == box][0]
        rows, cols = chosen[:, 0], chosen[:, 1]
        assert np.all((cols >= box.x_min) & (cols < box.x_max) & (rows >= box.y_min) & (rows < box.y_max))
        assert cols.min() == box.x_min and cols.max() == box.x_max - 1
        assert rows.min() == box.y_min and rows.max() == box.y_max - 1


def test_predictions_round_trip():
    buf = io.StringIO()
    write_predictions(buf, [("a", Box(0, 1, 5, 6), 0.2, False), ("b", Box(0, 0, 32, 32), 0.2, True)])
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2
    recs = read_predictions(io.StringIO(buf.getvalue()))
    assert recs[0]["box"] == Box(0, 1, 5, 6) and recs[1]["degenerate_flag"] is True
    assert set(recs[0]) >= {"image_id", "x_min", "y_min", "x_max", "y_max", "ratio", "degenerate_flag"}


def test_box_helpers():
    assert Box.from_inclusive(0, 0, 9, 9) == Box(0, 0, 10, 10)
    assert Box(0, 0, 4, 3).area == 12
    assert not Box(3, 0, 3, 4).is_valid()
