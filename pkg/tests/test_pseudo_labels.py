import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from casp.adaptation import SnapshotMatrix
from casp.data import DomainDataset
from casp.pseudo_labels import (
    StabilityReport,
    average_pseudo_labels,
    build_selftrain_set,
    make_report,
    select_threshold,
    stability,
)

from conftest import TINY_DIMS, make_sample

# Case-study predictions at epochs 0, 3, ..., 15 (rows) for six samples (columns).
CASE_STUDY = np.array(
    [
        [-2.38, +0.83, +2.12, -1.21, +1.98, +1.68],
        [-2.39, +0.32, +1.17, -1.21, +1.99, +1.74],
        [-2.40, -0.17, +0.85, -1.22, +1.95, +1.20],
        [-2.41, +0.08, +1.25, -1.23, +2.11, +1.27],
        [-2.41, +1.02, -0.01, -1.23, +2.12, +1.01],
        [-2.42, +1.14, +0.18, -1.23, +2.11, +0.84],
    ]
)


def brute_count(s, lam):
    """Number kept by sorting and taking the nearest-rank element as cut-off."""
    ordered = sorted(s)
    rank = max(1, math.ceil((100 - lam) * len(s) / 100 - 1e-9))
    cut = ordered[rank - 1]
    return sum(v <= cut for v in s)


def test_case_study_stability():
    s = stability(CASE_STUDY)
    np.testing.assert_allclose(s, [0.008, 0.46, 0.62, 0.004, 0.05, 0.22], atol=0.005)
    assert s[0] == pytest.approx(0.008)
    assert s[1] == pytest.approx(0.462)


def test_case_study_pseudo_labels_and_selection():
    y = average_pseudo_labels(CASE_STUDY)
    assert y[0] == pytest.approx(-2.4017, abs=1e-4)
    assert y[3] == pytest.approx(-1.2217, abs=1e-4)
    snap = SnapshotMatrix([0, 3, 6, 9, 12, 15], [f"case{i}" for i in range(1, 7)], CASE_STUDY)
    report = make_report(snap, lam=None, threshold=0.012)
    assert report.selected.tolist() == [True, False, False, True, False, False]


def test_case_study_selftrain_set(rng):
    target = DomainDataset(
        "t", (-3, 3), TINY_DIMS, {"train": [make_sample(f"case{i}", rng, hidden=True) for i in range(1, 7)]}
    )
    snap = SnapshotMatrix([0, 3, 6, 9, 12, 15], target.ids("train"), CASE_STUDY)
    ts = build_selftrain_set(target, make_report(snap, lam=None, threshold=0.012))
    assert ts.ids("train") == ["case1", "case4"]
    np.testing.assert_allclose(ts.labels("train"), [-2.40, -1.22], atol=0.01)
    assert ts.split("train")[0].features["audio"] is target.split("train")[0].features["audio"]


def test_constant_rows():
    preds = np.tile(np.array([0.5, -1.0, 2.0]), (4, 1))
    np.testing.assert_array_equal(stability(preds), 0.0)
    np.testing.assert_array_equal(average_pseudo_labels(preds), preds[0])


def test_stability_needs_two_rows():
    with pytest.raises(ValueError):
        stability(np.zeros((1, 3)))


def test_threshold_hand_case():
    s = np.arange(1, 11) / 10
    thr = select_threshold(s, 90)
    assert thr == 0.1
    assert int((s <= thr).sum()) == 1


@pytest.mark.parametrize("lam", [0, 100, -5, 120])
def test_threshold_rejects_bad_lambda(lam):
    with pytest.raises(ValueError):
        select_threshold([0.1, 0.2], lam)


def test_lambda_50_keeps_half(rng):
    for n in range(1, 40):
        s = rng.random(n)
        assert int((s <= select_threshold(s, 50)).sum()) == math.ceil(n / 2)


def test_counts_match_sort_oracle(rng):
    for _ in range(1000):
        s = rng.random(int(rng.integers(1, 200)))
        counts = []
        for lam in (50, 75, 90, 95):
            kept = int((s <= select_threshold(s, lam)).sum())
            assert kept == brute_count(s, lam)
            counts.append(kept)
        assert counts == sorted(counts, reverse=True)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(1, 12)), elements=st.floats(-5, 5)),
    st.floats(-3, 3),
)
def test_shift_and_permutation_properties(preds, c):
    s = stability(preds)
    assert np.all(s >= 0)
    np.testing.assert_allclose(stability(preds + c), s, atol=1e-9)
    np.testing.assert_allclose(average_pseudo_labels(preds + c), average_pseudo_labels(preds) + c, atol=1e-9)
    perm = np.arange(preds.shape[1])[::-1]
    np.testing.assert_array_equal(stability(preds[:, perm]), s[perm])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(0, 1)), st.floats(1, 99), st.floats(1, 99))
def test_selection_monotone_in_lambda(s, a, b):
    lo, hi = sorted((a, b))
    assert (s <= select_threshold(s, hi)).sum() <= (s <= select_threshold(s, lo)).sum()
    assert (s <= select_threshold(s, hi)).sum() >= 1


def test_report_round_trip_and_guards(rng):
    target = DomainDataset("t", (-3, 3), TINY_DIMS, {"train": [make_sample(f"s{i}", rng) for i in range(3)]})
    snap = SnapshotMatrix([0, 1], target.ids("train"), np.array([[0.0, 1.0, 2.0], [0.0, 1.5, 2.0]]))
    report = make_report(snap, lam=50)
    again = StabilityReport.from_dict(report.to_dict())
    np.testing.assert_array_equal(again.selected, report.selected)
    full = build_selftrain_set(target, make_report(snap, lam=None, threshold=10.0))
    assert len(full.split("train")) == 3
    np.testing.assert_allclose(full.labels("train"), [0.0, 1.25, 2.0])
    with pytest.raises(ValueError, match="no samples selected"):
        build_selftrain_set(target, make_report(snap, lam=None, threshold=-1.0))
    bad = SnapshotMatrix([0, 1], ["x", "y", "z"], snap.preds)
    with pytest.raises(ValueError, match="ids"):
        build_selftrain_set(target, make_report(bad, lam=50))
