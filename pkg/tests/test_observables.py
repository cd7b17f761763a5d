import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gelshatter.observables import (
    SizeHistogram,
    ccdf,
    cyclicity,
    cyclicity_from_signs,
    heatmap,
    mean_cluster_density,
    recurrence_times,
)


def test_ccdf_small_example():
    h = SizeHistogram.from_dict({1: 3, 2: 1, 5: 1})
    assert h.M == 10
    assert ccdf(h) == [(1, 2), (2, 1), (5, 0)]


def test_ccdf_rejects_empty():
    with pytest.raises(ValueError):
        ccdf(SizeHistogram(np.zeros(0, int), np.zeros(0, int), 0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=200))
def test_ccdf_non_increasing_and_ends_at_zero(sizes):
    rows = ccdf(SizeHistogram.from_samples(sizes))
    values = [v for _, v in rows]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[-1] == 0
    assert values[0] == len(sizes) - sizes.count(min(sizes))


def test_histogram_mass_is_validated():
    with pytest.raises(ValueError):
        SizeHistogram(np.array([1, 2]), np.array([1, 1]), 4)


def test_histogram_json_roundtrip():
    h = SizeHistogram.from_dict({1: 4, 3: 2})
    back = SizeHistogram.from_dict(json.loads(h.to_json()), M=10)
    assert back.as_dict() == h.as_dict()
    assert sorted(h.expand().tolist()) == [1, 1, 1, 1, 3, 3]


def test_mean_density_counts_absent_sizes_as_zero():
    a = SizeHistogram.from_dict({1: 2, 4: 1})
    b = SizeHistogram.from_dict({2: 1, 4: 1})
    m = mean_cluster_density([a, b])
    assert m.as_dict() == {1: 1.0, 2: 0.5, 4: 1.0}
    assert m.M == 6


def test_mean_density_rejects_mixed_mass():
    with pytest.raises(ValueError):
        mean_cluster_density([SizeHistogram.from_dict({1: 2}), SizeHistogram.from_dict({1: 3})])


def test_heatmap_corners():
    M = 100
    hm = heatmap((np.array([1, 100, 100, 50]), np.array([100, 1, 100, 50])), M, bins=10)
    assert hm.counts[0, 9] == 1      # all monomers
    assert hm.counts[9, 0] == 1      # single gel
    assert hm.counts[9, 9] == 1      # value 1.0 lands in the last bin
    assert hm.counts[5, 5] == 1
    assert hm.total == 4


def test_heatmap_tally_conserved(rng, tmp_path):
    M = 500
    k = rng.integers(1, M + 1, size=1000)
    n = rng.integers(1, M + 1, size=1000)
    hm = heatmap((k, n), M, bins=(7, 13))
    assert hm.counts.shape == (7, 13)
    assert hm.total == 1000
    hm.write(tmp_path / "hm.csv")
    side = json.loads((tmp_path / "hm.json").read_text())
    assert side["total"] == 1000
    assert len(side["edges_x"]) == 8


def test_recurrence_example():
    events = [(10, 5, True), (12, 2, False), (25, 7, True), (45, 6, True)]
    assert recurrence_times(events).tolist() == [15, 20]
    assert recurrence_times(events[:1]).size == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=2, max_size=50, unique=True))
def test_recurrence_times_sum_to_span(steps):
    steps = sorted(steps)
    t = recurrence_times([(s, 1, True) for s in steps])
    assert t.sum() == steps[-1] - steps[0]
    assert np.all(t > 0)


def test_cyclicity_examples():
    assert cyclicity([1, 2, 3, 1]) == pytest.approx(1 / 3)
    assert cyclicity([5, 5, 5]) == 0.0
    assert cyclicity_from_signs([1, 1, -1, 0]) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        cyclicity([1, 2, 3], stride=2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 100), min_size=2, max_size=300))
def test_cyclicity_bounds_and_reversal(series):
    k = cyclicity(series)
    assert -1.0 <= k <= 1.0
    assert cyclicity(series[::-1]) == pytest.approx(-k)
