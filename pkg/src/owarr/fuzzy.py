"""Percentile-based triangular fuzzy partitions of a label range.

With three sets the breakpoints are the 5th, 50th and 95th percentiles of the
labels: ``Small`` is a left shoulder, ``Medium`` a triangle peaking at the
median and ``Large`` a right shoulder. Adjacent sets cross at 0.5 so the raw
degrees of any label sum to one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

LOW_PERCENTILE = 5.0
HIGH_PERCENTILE = 95.0


class DegeneratePartitionError(ValueError):
    pass


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile, ``h = (N - 1) * p / 100``."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("percentile of an empty vector")
    if not 0 <= p <= 100:
        raise ValueError("p must lie in [0, 100]")
    return float(np.percentile(values, p, method="linear"))


@dataclass(frozen=True)
class TriangularPartition:
    breakpoints: tuple
    num_sets: int

    @property
    def degenerate(self) -> bool:
        b = np.asarray(self.breakpoints)
        return self.num_sets >= 2 and bool(np.any(np.diff(b) <= 0))


def build_partition(labels, num_sets: int = 3) -> TriangularPartition:
    """Place ``num_sets`` breakpoints at evenly spaced percentiles in [5, 95].

    A partition whose breakpoints are not strictly increasing (e.g. constant
    labels) is returned with ``degenerate`` set; callers skip conditional
    adaptation for it.
    """
    if num_sets < 2:
        raise ValueError("a partition needs at least two fuzzy sets")
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size == 0:
        raise ValueError("cannot partition an empty label vector")
    ps = np.linspace(LOW_PERCENTILE, HIGH_PERCENTILE, num_sets)
    bp = np.percentile(labels, ps, method="linear")
    return TriangularPartition(tuple(float(b) for b in bp), int(num_sets))


def membership(partition: TriangularPartition, y) -> np.ndarray:
    """Raw membership degrees of ``y`` in every set.

    Returns shape ``(num_sets,)`` for scalar ``y`` and ``(len(y), num_sets)``
    otherwise. Outside ``[p5, p95]`` the shoulders saturate at one.
    """
    if partition.degenerate:
        raise DegeneratePartitionError("membership undefined on a degenerate partition")
    bp = np.asarray(partition.breakpoints, dtype=np.float64)
    scalar = np.ndim(y) == 0
    yv = np.atleast_1d(np.asarray(y, dtype=np.float64))
    eye = np.eye(partition.num_sets)
    # np.interp clamps to the end values, which gives exactly the shoulders
    mu = np.stack([np.interp(yv, bp, eye[c]) for c in range(partition.num_sets)], axis=1)
    return mu[0] if scalar else mu


@dataclass(frozen=True)
class MembershipTable:
    """Per-class normalized degrees; ``empty`` lists classes with no support."""

    mu_bar: np.ndarray
    empty: tuple = ()

    @property
    def num_classes(self) -> int:
        return self.mu_bar.shape[1]

    @cached_property
    def supported(self) -> np.ndarray:
        mask = np.ones(self.num_classes, dtype=bool)
        mask[list(self.empty)] = False
        mask.setflags(write=False)
        return mask


def normalized_memberships(partition: TriangularPartition, labels) -> MembershipTable:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size == 0:
        raise ValueError("no labels to normalize")
    mu = membership(partition, labels)
    sums = mu.sum(axis=0)
    empty = tuple(int(c) for c in np.flatnonzero(sums <= 0))
    if empty:
        warnings.warn(f"fuzzy classes {empty} have no support; their columns are zeroed",
                      RuntimeWarning, stacklevel=2)
    safe = np.where(sums > 0, sums, 1.0)
    mu_bar = mu / safe
    mu_bar[:, sums <= 0] = 0.0
    return MembershipTable(mu_bar, empty)


def label_memberships(labels, num_sets: int) -> MembershipTable | None:
    """Partition ``labels`` by their own percentiles and normalize.

    Returns None when conditional adaptation is off (``num_sets == 0``) or the
    partition is degenerate.
    """
    if num_sets == 0:
        return None
    part = build_partition(labels, num_sets)
    if part.degenerate:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return normalized_memberships(part, labels)
