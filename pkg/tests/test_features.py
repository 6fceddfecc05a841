import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from binpick.features import (
    BinningConfig,
    SweptFeatures,
    bin_indices,
    dataset_header,
    hist_feature,
    read_dataset,
    selection_index,
    svm_feature,
    write_dataset,
)
from binpick.geometry import SweptPoints

dist = st.floats(0.0, 0.2, allow_nan=False)
point_lists = st.lists(st.tuples(dist, dist), max_size=60)


def as_swept(pairs):
    pairs = list(pairs)
    return SweptPoints.from_dh([p[0] for p in pairs], [p[1] for p in pairs])


def brute_hist(pairs, cfg):
    counts = [0] * cfg.size
    for d, h in pairs:
        jy = min(math.floor(d / cfg.w_y) + 1, cfg.b_y)
        jz = min(math.floor(h / cfg.w_z) + 1, cfg.b_z)
        counts[(jz - 1) * cfg.b_y + (jy - 1)] += 1
    return counts


def test_svm_feature_examples():
    assert svm_feature(SweptPoints.empty()) == (0.0, 0.0)
    f = svm_feature(as_swept([(0.01, 0.02), (0.03, 0.0)]))
    assert f.sum_h == pytest.approx(0.02, abs=1e-15)
    assert f.sum_d == pytest.approx(0.04, abs=1e-15)


def test_svm_feature_matches_loop(rng):
    pairs = rng.uniform(0, 0.05, size=(500, 2))
    f = svm_feature(as_swept(pairs))
    sh = sd = 0.0
    for d, h in pairs:
        sh += h
        sd += d
    assert abs(f.sum_h - sh) <= 1e-12 and abs(f.sum_d - sd) <= 1e-12


def test_bin_index_examples():
    assert bin_indices(0.0, 0.0) == (1, 1)
    assert bin_indices(0.049, 0.0)[0] == 5
    assert bin_indices(1.0, 0.0)[0] == 5


def test_hist_examples(rng):
    cfg = BinningConfig()
    assert (cfg.b_y, cfg.b_z, cfg.w_y, cfg.w_z) == (5, 5, 0.01, 0.01)
    assert hist_feature(SweptPoints.empty()).tolist() == [0] * 25
    pairs = rng.uniform(0, 0.07, size=(200, 2))
    assert hist_feature(as_swept(pairs)).tolist() == brute_hist(pairs, cfg)


def test_hist_accepts_iterables():
    sw = as_swept([(0.015, 0.025)])
    assert hist_feature(list(sw)).tolist() == hist_feature(sw).tolist()


def test_selection_index_examples():
    one = as_swept([(0.02, 0.01)])
    assert selection_index(one) == pytest.approx(-0.03, abs=1e-15)
    assert selection_index(one, 0.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        selection_index(one, -1.0, 1.0)


@pytest.mark.invariant
@given(point_lists, st.integers(1, 8), st.integers(1, 8), st.floats(0.001, 0.05))
def test_count_conservation(pairs, by, bz, w):
    cfg = BinningConfig(by, bz, w, w)
    counts = hist_feature(as_swept(pairs), cfg)
    assert counts.sum() == len(pairs)
    assert counts.tolist() == brute_hist(pairs, cfg)


@pytest.mark.invariant
@given(point_lists, st.randoms(use_true_random=False))
def test_permutation_invariance(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a, b = as_swept(pairs), as_swept(shuffled)
    assert hist_feature(a).tolist() == hist_feature(b).tolist()
    np.testing.assert_allclose(svm_feature(a), svm_feature(b), atol=1e-12)


@pytest.mark.invariant
@given(point_lists, st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_selection_index_sign(pairs, alpha, beta):
    sw = as_swept(pairs)
    value = selection_index(sw, alpha, beta)
    assert value <= 0.0
    all_zero = all(d == 0 and h == 0 for d, h in pairs)
    if alpha == 0 and beta == 0 or all_zero:
        assert value == 0.0


# keep the new point above rounding so the strict decrease is observable
visible = st.floats(1e-6, 0.2)


@pytest.mark.invariant
@given(point_lists, st.one_of(st.tuples(visible, dist), st.tuples(dist, visible)),
       st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_adding_a_point_lowers_index(pairs, extra, alpha, beta):
    before = selection_index(as_swept(pairs), alpha, beta)
    after = selection_index(as_swept(list(pairs) + [extra]), alpha, beta)
    assert after < before


@pytest.mark.invariant
@given(st.lists(dist, min_size=2, max_size=30))
def test_bin_indices_monotone(values):
    v = np.sort(np.array(values))
    jy, jz = bin_indices(v, v)
    assert np.all(np.diff(jy) >= 0) and np.all(np.diff(jz) >= 0)


def test_transformer_shapes():
    sets = [as_swept([(0.01, 0.02)]), SweptPoints.empty()]
    assert SweptFeatures("svm2d").fit(sets).transform(sets).shape == (2, 2)
    t = SweptFeatures("hist", b_y=3, b_z=4)
    assert t.fit_transform(sets).shape == (2, 12)
    assert t.get_params()["b_z"] == 4
    with pytest.raises(ValueError):
        SweptFeatures("bogus").fit(sets)


def test_dataset_round_trip(tmp_path, rng):
    y = np.array([1, -1, 1])
    svm = rng.uniform(0, 1, size=(3, 2))
    hist = rng.integers(0, 9, size=(3, 25))
    path = tmp_path / "d.csv"
    write_dataset(path, y, svm, hist)
    header = path.read_text().splitlines()[0].split(",")
    assert header == dataset_header() and len(header) == 28
    y2, svm2, hist2 = read_dataset(path)
    np.testing.assert_array_equal(y2, y)
    np.testing.assert_array_equal(svm2, svm)
    np.testing.assert_array_equal(hist2, hist)
