import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from owarr.fuzzy import (DegeneratePartitionError, build_partition, label_memberships,
                         membership, normalized_memberships, percentile)

labels_st = arrays(np.float64, st.integers(3, 60),
                   elements=st.floats(0, 1, allow_nan=False, width=64))


def test_percentile_examples():
    assert percentile([1, 2, 3, 4, 5], 50) == 3
    assert percentile([0, 10], 50) == 5
    v = percentile(np.arange(100.0), 5)
    assert 4 <= v <= 6
    assert v == pytest.approx(4.95, abs=1e-12)


def test_percentile_errors():
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1.0], 101)


@given(labels_st, st.floats(0, 100))
def test_percentile_matches_oracle(values, p):
    assert percentile(values, p) == pytest.approx(oracles.percentile(values, p), abs=1e-12)


def test_uniform_breakpoints(rng):
    y = rng.uniform(size=5000)
    bp = build_partition(y).breakpoints
    np.testing.assert_allclose(bp, oracles.breakpoints(y), atol=1e-12)
    np.testing.assert_allclose(bp, (0.05, 0.5, 0.95), atol=0.03)


def test_constant_labels_degenerate():
    part = build_partition(np.zeros(10))
    assert part.degenerate
    assert label_memberships(np.zeros(10), 3) is None
    with pytest.raises(DegeneratePartitionError):
        membership(part, 0.0)


def test_two_sets_are_shoulders(rng):
    y = rng.uniform(size=200)
    part = build_partition(y, 2)
    p5, p95 = oracles.percentile(y, 5), oracles.percentile(y, 95)
    np.testing.assert_allclose(part.breakpoints, (p5, p95), atol=1e-12)
    np.testing.assert_allclose(membership(part, p5), (1, 0))
    np.testing.assert_allclose(membership(part, (p5 + p95) / 2), (0.5, 0.5))


def test_fixed_points_exact(rng):
    y = rng.uniform(size=101)
    part = build_partition(y)
    p5, p50, p95 = part.breakpoints
    assert membership(part, p50).tolist() == [0.0, 1.0, 0.0]
    assert membership(part, p5).tolist() == [1.0, 0.0, 0.0]
    assert membership(part, p95).tolist() == [0.0, 0.0, 1.0]
    mid = membership(part, (p5 + p50) / 2)
    np.testing.assert_allclose(mid, (0.5, 0.5, 0.0), atol=1e-15)
    assert membership(part, -5.0).tolist() == [1.0, 0.0, 0.0]
    assert membership(part, 5.0).tolist() == [0.0, 0.0, 1.0]


def test_normalized_examples(rng):
    part = build_partition(rng.uniform(size=100))
    p5, p50, p95 = part.breakpoints
    with pytest.warns(RuntimeWarning):
        tab = normalized_memberships(part, [p50])
    assert tab.mu_bar.tolist() == [[0.0, 1.0, 0.0]]
    assert tab.empty == (0, 2)
    with pytest.warns(RuntimeWarning):
        tab = normalized_memberships(part, [p5, p95])
    np.testing.assert_array_equal(tab.mu_bar[:, 0], [1, 0])
    np.testing.assert_array_equal(tab.mu_bar[:, 2], [0, 1])
    assert tab.supported.tolist() == [True, False, True]


def test_uniform_column_sums(rng):
    y = rng.uniform(size=100)
    tab = normalized_memberships(build_partition(y), y)
    np.testing.assert_allclose(tab.mu_bar, oracles.normalized_table(y), atol=1e-15)
    assert np.all(np.abs(tab.mu_bar.sum(axis=0) - 1) < 1e-12)


@given(labels_st, st.integers(2, 5))
def test_partition_properties(y, C):
    part = build_partition(y, C)
    if part.degenerate:
        assert label_memberships(y, C) is None
        return
    bp = part.breakpoints
    mu = membership(part, y)
    # raw degrees of any label sum to one (adjacent sets cross at 0.5)
    np.testing.assert_allclose(mu.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((mu >= 0) & (mu <= 1))
    for i, v in enumerate(y):
        np.testing.assert_allclose(mu[i], oracles.raw_membership(bp, v), atol=1e-12)
    grid = np.linspace(-0.1, 1.1, 101)
    g = membership(part, grid)
    assert np.all(np.diff(g[:, 0]) <= 1e-15)
    assert np.all(np.diff(g[:, -1]) >= -1e-15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tab = normalized_memberships(part, y)
    sums = tab.mu_bar.sum(axis=0)
    for c in range(C):
        if tab.supported[c]:
            assert abs(sums[c] - 1) < 1e-12
        else:
            assert sums[c] == 0


@given(st.integers(0, 2**32 - 1))
def test_fixed_points_any_labels(seed):
    # membership of the three fixed points is exact for any label vector
    y = np.random.default_rng(seed).uniform(size=30)
    part = build_partition(y)
    p5, p50, p95 = part.breakpoints
    assert membership(part, p50).tolist() == [0.0, 1.0, 0.0]
    assert membership(part, p5).tolist() == [1.0, 0.0, 0.0]
    np.testing.assert_allclose(membership(part, (p50 + p95) / 2), (0, 0.5, 0.5), atol=1e-15)


def test_num_sets_validation():
    with pytest.raises(ValueError):
        build_partition([0.1, 0.2], 1)
    with pytest.raises(ValueError):
        build_partition([], 3)
    assert label_memberships([0.1, 0.5, 0.9], 0) is None
