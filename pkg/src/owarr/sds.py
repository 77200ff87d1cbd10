"""Source domain selection.

Each domain is summarized by the membership-weighted feature mean of every
fuzzy label class. The distance between a source and the target is the sum of
Euclidean distances between matching class means; the distances are split
into ``k`` groups by one-dimensional k-means and the group with the smallest
centroid is kept.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import _UNSET, PreparedSource, prepare_source
from .datamodel import DomainDataset, Hyperparams
from .ensemble import EnsembleModel, owarr_train
from .fuzzy import MembershipTable, label_memberships


@dataclass(frozen=True)
class ClassMeans:
    means: np.ndarray  # (num_classes, d)
    supported: np.ndarray  # bool, (num_classes,)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]


def class_means(dataset: DomainDataset, table: MembershipTable | None) -> ClassMeans:
    """Membership-weighted class means; a missing table means one crisp class."""
    if table is None:
        return ClassMeans(dataset.features.mean(axis=0, keepdims=True), np.array([True]))
    if table.mu_bar.shape[0] != dataset.n_epochs:
        raise ValueError("membership table rows do not match the dataset")
    return ClassMeans(table.mu_bar.T @ dataset.features, table.supported.copy())


def domain_distance(src: ClassMeans, tgt: ClassMeans, return_count: bool = False):
    """Sum of per-class Euclidean distances over classes supported in both."""
    if src.num_classes != tgt.num_classes:
        raise ValueError(f"class count mismatch: {src.num_classes} vs {tgt.num_classes}")
    keep = src.supported & tgt.supported
    dist = float(np.linalg.norm(src.means[keep] - tgt.means[keep], axis=1).sum())
    if return_count:
        return dist, int(keep.sum())
    return dist


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray


def kmeans_1d(values, k: int) -> KMeansResult:
    """Globally optimal one-dimensional k-means.

    An optimal clustering of scalars is a split of the sorted values into
    contiguous runs, found here by dynamic programming over split points.
    Equal values never straddle a split, so a vector of identical values
    yields a single cluster. Cluster 0 has the smallest centroid.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    N = x.size
    if k < 1:
        raise ValueError("k must be positive")
    if k > N:
        raise ValueError(f"k={k} exceeds the number of values ({N})")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    k_eff = min(k, int(np.unique(xs).size))
    # plain floats: N is the number of sources, where numpy call overhead dominates
    xl = xs.tolist()
    s1, s2 = [0.0], [0.0]
    for v in xl:
        s1.append(s1[-1] + v)
        s2.append(s2[-1] + v * v)
    # a split before position i is allowed only between distinct values
    allowed = [False] + [xl[i] > xl[i - 1] for i in range(1, N)] + [False]
    inf = math.inf
    cost = [[inf] * (N + 1) for _ in range(k_eff + 1)]
    back = [[0] * (N + 1) for _ in range(k_eff + 1)]
    cost[0][0] = 0.0
    for c in range(1, k_eff + 1):
        prev = cost[c - 1]
        for j in range(c, N + 1):
            if j < N and not allowed[j]:
                continue
            best, arg = inf, -1
            for i in range(c - 1, j):
                if prev[i] == inf or (i > 0 and not allowed[i]):
                    continue
                tot = s1[j] - s1[i]
                v = prev[i] + max(s2[j] - s2[i] - tot * tot / (j - i), 0.0)
                if v < best:
                    best, arg = v, i
            cost[c][j] = best
            back[c][j] = arg
    bounds = [N]
    j = N
    for c in range(k_eff, 0, -1):
        j = back[c][j]
        bounds.append(j)
    bounds = bounds[::-1]
    sorted_labels = np.empty(N, dtype=int)
    centroids = np.empty(k_eff)
    for c in range(k_eff):
        lo, hi = bounds[c], bounds[c + 1]
        sorted_labels[lo:hi] = c
        centroids[c] = xs[lo:hi].mean()
    labels = np.empty(N, dtype=int)
    labels[order] = sorted_labels
    return KMeansResult(labels, centroids)


@dataclass(frozen=True)
class SelectionReport:
    source_ids: tuple
    distances: np.ndarray
    clusters: np.ndarray
    selected: np.ndarray  # bool
    classes_used: np.ndarray

    @property
    def selected_ids(self) -> list:
        return [s for s, keep in zip(self.source_ids, self.selected) if keep]

    def rows(self) -> list:
        return [
            {"source_id": s, "distance": repr(float(dd)), "cluster": int(c),
             "selected": int(bool(sel)), "classes_used": int(u)}
            for s, dd, c, sel, u in zip(self.source_ids, self.distances, self.clusters,
                                        self.selected, self.classes_used)
        ]

    def to_csv(self, path) -> Path:
        path = Path(path)
        fields = ["source_id", "distance", "cluster", "selected", "classes_used"]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            writer.writerows(self.rows())
        return path


def _as_prepared(sources, hp):
    return [s if isinstance(s, PreparedSource) else prepare_source(s, hp.num_fuzzy_sets)
            for s in sources]


def _prepared_means(p: PreparedSource, crisp: bool) -> ClassMeans:
    if crisp or p.table is None:
        return ClassMeans(p.mean[None, :], np.array([True]))
    return ClassMeans(p.class_means, p.table.supported)


def selection_report(sources, target: DomainDataset | None, hp: Hyperparams,
                     target_table=_UNSET) -> SelectionReport:
    prepared = _as_prepared(sources, hp)
    ids = tuple(p.id for p in prepared)
    Z = len(prepared)
    if target is None or target.n_epochs == 0 or Z == 0:
        zeros = np.zeros(Z)
        return SelectionReport(ids, zeros, np.zeros(Z, dtype=int), np.ones(Z, dtype=bool),
                               np.zeros(Z, dtype=int))
    tgt_table = (label_memberships(target.labels, hp.num_fuzzy_sets)
                 if target_table is _UNSET else target_table)
    tgt_means = class_means(target, tgt_table)
    tgt_crisp = class_means(target, None)
    dists = np.empty(Z)
    used = np.empty(Z, dtype=int)
    fuzzy = [i for i, p in enumerate(prepared) if tgt_table is not None and p.table is not None]
    if fuzzy:
        means = np.stack([prepared[i].class_means for i in fuzzy])
        keep = np.stack([prepared[i].table.supported for i in fuzzy]) & tgt_means.supported
        gaps = np.linalg.norm(means - tgt_means.means, axis=2)
        dists[fuzzy] = np.where(keep, gaps, 0.0).sum(axis=1)
        used[fuzzy] = keep.sum(axis=1)
    for i, p in enumerate(prepared):
        if tgt_table is None or p.table is None:
            # no usable classes on one side: compare crisp means
            dists[i], used[i] = domain_distance(_prepared_means(p, True), tgt_crisp, True)
    k = min(hp.kmeans_k, Z)
    km = kmeans_1d(dists, k)
    selected = km.labels == 0
    return SelectionReport(ids, dists, km.labels, selected, used)


def select_sources(sources, target: DomainDataset | None, hp: Hyperparams) -> list:
    """Ids of the sources in the cluster nearest the target (all when m == 0)."""
    return selection_report(sources, target, hp).selected_ids


def owarr_sds_train(sources, target: DomainDataset | None, hp: Hyperparams,
                    backend: str | None = None, return_report: bool = False):
    """Select the nearest source cluster, then run OwARR on it."""
    prepared = _as_prepared(sources, hp)
    table = _UNSET
    if target is not None and target.n_epochs:
        table = label_memberships(target.labels, hp.num_fuzzy_sets)
    report = selection_report(prepared, target, hp, target_table=table)
    chosen = [p for p, keep in zip(prepared, report.selected) if keep]
    model: EnsembleModel = owarr_train(chosen, target, hp, backend=backend,
                                       target_table=table)
    if return_report:
        return model, report
    return model
