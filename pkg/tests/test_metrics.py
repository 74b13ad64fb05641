import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duwmt.errors import ShapeError
from duwmt.metrics import (
    EmptyMaskError,
    MetricsReport,
    asd,
    boundary_mask,
    dice,
    hd95,
    jaccard,
    surface_distances,
)

from oracles import boundary_pixels_ref, surface_distances_ref


def rand_mask(h, w, seed, density=0.5):
    return np.random.default_rng(seed).random((h, w)) < density


def blob(h, w, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


# -- dice / jaccard --------------------------------------------------------------


def test_identical_masks():
    m = blob(8, 8, 4, 4, 2)
    assert dice(m, m) == 1.0 and jaccard(m, m) == 1.0


def test_disjoint_masks():
    a = blob(16, 16, 4, 4, 2)
    b = blob(16, 16, 12, 12, 2)
    assert dice(a, b) == 0.0 and jaccard(a, b) == 0.0


def test_hand_enumerated_overlap_and_identity():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, 0] = a[0, 1] = True  # |A| = 2
    b[0, 0] = True  # |B| = 1, intersection 1
    d, j = dice(a, b), jaccard(a, b)
    assert abs(d - 2 / 3) < 1e-12 and abs(j - 1 / 2) < 1e-12
    assert abs(d - 2 * j / (1 + j)) < 1e-9


def test_both_empty_convention():
    z = np.zeros((5, 5), dtype=bool)
    assert dice(z, z) == 1.0 and jaccard(z, z) == 1.0
    assert dice(z, blob(5, 5, 2, 2, 1)) == 0.0


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        dice(np.zeros((3, 3), bool), np.zeros((4, 4), bool))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_dice_jaccard_identity_and_symmetry(seed):
    a = rand_mask(10, 10, seed)
    b = rand_mask(10, 10, seed + 1)
    d, j = dice(a, b), jaccard(a, b)
    assert dice(b, a) == d and jaccard(b, a) == j
    assert abs(d - 2 * j / (1 + j)) < 1e-9
    assert j <= d + 1e-12


# -- boundaries and surface distances ------------------------------------------------


def test_boundary_matches_reference():
    for seed in range(10):
        m = rand_mask(9, 11, seed, density=0.4)
        got = sorted(map(tuple, np.argwhere(boundary_mask(m))))
        assert got == boundary_pixels_ref(m)


def test_border_counts_as_background():
    m = np.ones((4, 4), dtype=bool)
    assert boundary_mask(m).sum() == 12  # ring; the 2x2 interior is not boundary


def test_identical_masks_all_zero_distances():
    m = blob(12, 12, 6, 6, 3)
    d1, d2 = surface_distances(m, m)
    assert (d1 == 0).all() and (d2 == 0).all()


def test_three_four_five_single_pixels():
    a = np.zeros((8, 8), dtype=bool)
    b = np.zeros((8, 8), dtype=bool)
    a[0, 0] = True
    b[3, 4] = True
    d1, d2 = surface_distances(a, b)
    np.testing.assert_array_equal(d1, [5.0])
    np.testing.assert_array_equal(d2, [5.0])


def test_empty_mask_signals_undefined():
    with pytest.raises(EmptyMaskError):
        surface_distances(np.zeros((4, 4), bool), blob(4, 4, 2, 2, 1))


def test_surface_distances_match_brute_force_exactly():
    rng = np.random.default_rng(0)
    for trial in range(100):
        h, w = int(rng.integers(4, 33)), int(rng.integers(4, 33))
        a = rand_mask(h, w, 2 * trial, density=float(rng.uniform(0.1, 0.9)))
        b = rand_mask(h, w, 2 * trial + 1, density=float(rng.uniform(0.1, 0.9)))
        if not a.any() or not b.any():
            continue
        got = surface_distances(a, b)
        want = surface_distances_ref(a, b)
        np.testing.assert_array_equal(got[0], np.array(want[0]))
        np.testing.assert_array_equal(got[1], np.array(want[1]))


# -- hd95 / asd -------------------------------------------------------------------------


def test_zero_distances():
    z = np.zeros(7)
    assert hd95(z, z) == 0.0 and asd(z, z) == 0.0


def test_hand_computed_percentile_rule():
    d1 = np.array([0.0, 0.0, 0.0, 10.0])
    d2 = np.array([0.0])
    # 95th percentile of d1 by linear interpolation: rank 2.85 -> 8.5
    assert abs(hd95(d1, d2) - 8.5) < 1e-12
    assert abs(asd(d1, d2) - 2.0) < 1e-12


def test_hd95_bounded_by_max():
    r = np.random.default_rng(1)
    for _ in range(50):
        d1 = np.sort(r.random(int(r.integers(1, 30))) * 10)
        d2 = np.sort(r.random(int(r.integers(1, 30))) * 10)
        assert hd95(d1, d2) <= max(d1.max(), d2.max()) + 1e-12


def test_translation_invariance():
    a = blob(20, 20, 6, 6, 3)
    b = blob(20, 20, 8, 7, 4)
    a2 = np.roll(np.roll(a, 5, axis=0), 4, axis=1)
    b2 = np.roll(np.roll(b, 5, axis=0), 4, axis=1)
    assert dice(a, b) == dice(a2, b2)
    assert jaccard(a, b) == jaccard(a2, b2)
    d, dd = surface_distances(a, b), surface_distances(a2, b2)
    np.testing.assert_array_equal(d[0], dd[0])
    np.testing.assert_array_equal(d[1], dd[1])


def test_surface_metric_symmetry():
    a = blob(16, 16, 6, 6, 3)
    b = blob(16, 16, 9, 8, 4)
    d_ab = surface_distances(a, b)
    d_ba = surface_distances(b, a)
    assert hd95(*d_ab) == hd95(*d_ba)
    assert asd(*d_ab) == asd(*d_ba)


# -- report ------------------------------------------------------------------------------


def test_report_aggregates_and_counts_undefined():
    rep = MetricsReport()
    m = blob(8, 8, 4, 4, 2)
    rep.add_pair(m, m)
    rep.add_pair(np.zeros((8, 8), bool), m)  # empty prediction: surface undefined
    assert rep.n_samples == 2
    assert rep.n_surface_undefined == 1
    assert len(rep.hd95_values) == 1
    assert rep.dice_values[0] == 1.0 and rep.dice_values[1] == 0.0
    d = rep.to_dict()
    assert d["hd95"] == 0.0 and d["n_surface_undefined"] == 1
