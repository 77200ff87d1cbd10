import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from owarr import DomainDataset, Hyperparams, owarr_sds_train, owarr_train, select_sources
from owarr.fuzzy import MembershipTable, label_memberships
from owarr.sds import ClassMeans, class_means, domain_distance, kmeans_1d, selection_report
from owarr.synthdata import GeneratorConfig, generate, near_far_domains


def test_class_means_trivial():
    X = np.tile([1.0, -2.0, 3.0], (6, 1))
    tab = label_memberships(np.linspace(0, 1, 6), 3)
    cm = class_means(DomainDataset("c", X, np.linspace(0, 1, 6)), tab)
    np.testing.assert_allclose(cm.means, np.tile([1.0, -2.0, 3.0], (3, 1)), atol=1e-15)
    two = DomainDataset("t", [[0.0, 0.0], [2.0, 4.0]], [0.2, 0.4])
    cm2 = class_means(two, MembershipTable(np.array([[0.5], [0.5]])))
    np.testing.assert_array_equal(cm2.means, [[1.0, 2.0]])


def test_class_means_oracle(rng):
    X, y = rng.standard_normal((10, 4)), rng.uniform(size=10)
    tab = label_memberships(y, 3)
    cm = class_means(DomainDataset("r", X, y), tab)
    ref = oracles.class_means(X, oracles.normalized_table(y))
    assert np.max(np.abs(cm.means - ref)) <= 1e-13


def test_class_means_row_mismatch(rng):
    with pytest.raises(ValueError):
        class_means(DomainDataset("r", np.zeros((3, 2)), np.zeros(3)),
                    MembershipTable(np.ones((2, 3))))


def test_distance_examples(rng):
    M = rng.standard_normal((3, 4))
    sup = np.ones(3, bool)
    a = ClassMeans(M, sup)
    assert domain_distance(a, ClassMeans(M.copy(), sup)) == 0
    u = np.array([3.0, 0, 4.0, 0])
    M2 = M.copy()
    M2[1] += u
    assert domain_distance(a, ClassMeans(M2, sup)) == pytest.approx(5.0, abs=1e-14)
    with pytest.raises(ValueError, match="class count"):
        domain_distance(a, ClassMeans(M[:2], sup[:2]))


def test_translation_distance(rng):
    X, y = rng.standard_normal((30, 3)), rng.uniform(size=30)
    u = np.array([0.3, -1.2, 0.5])
    tab = label_memberships(y, 3)
    src = class_means(DomainDataset("s", X, y), tab)
    tgt = class_means(DomainDataset("t", X + u, y), tab)
    ref_s = oracles.class_means(X, oracles.normalized_table(y))
    ref_t = oracles.class_means(X + u, oracles.normalized_table(y))
    ref = sum(np.linalg.norm(ref_s[c] - ref_t[c]) for c in range(3))
    assert domain_distance(src, tgt) == pytest.approx(ref, rel=1e-12)
    assert domain_distance(src, tgt) == pytest.approx(3 * np.linalg.norm(u), rel=1e-12)


def test_distance_skips_unsupported(rng):
    M = rng.standard_normal((3, 2))
    a = ClassMeans(M, np.array([True, True, True]))
    b = ClassMeans(M + 1.0, np.array([True, False, True]))
    d, used = domain_distance(a, b, return_count=True)
    assert used == 2
    assert d == pytest.approx(2 * np.sqrt(2))


@given(st.integers(0, 2**32 - 1))
def test_distance_pseudometric(seed):
    r = np.random.default_rng(seed)
    sup = np.ones(3, bool)
    a, b, c = (ClassMeans(r.standard_normal((3, 2)), sup) for _ in range(3))
    assert domain_distance(a, b) == pytest.approx(domain_distance(b, a))
    assert domain_distance(a, c) <= domain_distance(a, b) + domain_distance(b, c) + 1e-12


def test_kmeans_examples():
    km = kmeans_1d([1, 1, 1, 10, 10], 2)
    assert km.labels.tolist() == [0, 0, 0, 1, 1]
    np.testing.assert_allclose(km.centroids, [1, 10])
    same = kmeans_1d([4.0] * 5, 2)
    assert same.labels.tolist() == [0] * 5
    with pytest.raises(ValueError):
        kmeans_1d([1.0], 2)


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_kmeans_matches_exhaustive_split(seed, k):
    vals = np.random.default_rng(seed).uniform(0, 10, 14)
    km = kmeans_1d(vals, k)
    parts, best = oracles.best_split(vals.tolist(), k)
    got = {frozenset(np.flatnonzero(km.labels == c).tolist()) for c in range(k)}
    sse = sum(((vals[km.labels == c] - km.centroids[c]) ** 2).sum() for c in range(k))
    assert sse == pytest.approx(best, rel=1e-9, abs=1e-12)
    assert got == parts
    assert np.all(np.diff(km.centroids) > 0)


def test_select_m0_and_single(rng, make_domain):
    hp = Hyperparams()
    srcs = [make_domain(rng, 50, 3, f"s{i}", shift=i) for i in range(4)]
    assert select_sources(srcs, None, hp) == ["s0", "s1", "s2", "s3"]
    tgt = make_domain(rng, 10, 3, "t")
    assert select_sources(srcs[:1], tgt, hp) == ["s0"]


def test_near_far_selection():
    target, sources, near = near_far_domains(GeneratorConfig(epochs_per_domain=300, seed=1))
    cal = target.subset(np.arange(20))
    assert sorted(select_sources(sources, cal, Hyperparams())) == sorted(near)


def test_selection_subset_nonempty_and_fraction():
    cfg = GeneratorConfig(epochs_per_domain=300)
    hp = Hyperparams()
    fractions = []
    for seed in range(30):
        domains = generate(GeneratorConfig(**{**cfg.to_dict(), "seed": seed}))
        target, sources = domains[0], domains[1:]
        cal = target.subset(np.arange(20))
        sel = select_sources(sources, cal, hp)
        assert sel and set(sel) <= {s.id for s in sources}
        fractions.append(len(sel) / len(sources))
    assert 0.2 <= np.mean(fractions) <= 0.8


def test_crisp_fallback_constant_target(rng, make_domain):
    srcs = [make_domain(rng, 50, 2, "near"), make_domain(rng, 50, 2, "far", shift=20)]
    tgt = DomainDataset("t", rng.standard_normal((5, 2)), np.full(5, 0.5))
    rep = selection_report(srcs, tgt, Hyperparams())
    assert rep.selected_ids == ["near"]
    assert rep.classes_used.tolist() == [1, 1]


def test_report_csv(tmp_path, rng, make_domain):
    srcs = [make_domain(rng, 40, 2, f"s{i}", shift=3 * i) for i in range(3)]
    tgt = make_domain(rng, 8, 2, "t")
    rep = selection_report(srcs, tgt, Hyperparams())
    with rep.to_csv(tmp_path / "sel.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["source_id"] for r in rows] == ["s0", "s1", "s2"]
    assert set(rows[0]) >= {"source_id", "distance", "cluster", "selected"}
    assert rows[0]["selected"] == "1"


def test_sds_train_equals_owarr_on_selected(rng, make_domain):
    hp = Hyperparams()
    srcs = [make_domain(rng, 40, 2, f"s{i}", shift=3 * (i % 2)) for i in range(4)]
    tgt = make_domain(rng, 8, 2, "t")
    model, rep = owarr_sds_train(srcs, tgt, hp, return_report=True)
    chosen = [s for s in srcs if s.id in rep.selected_ids]
    ref = owarr_train(chosen, tgt, hp)
    X = rng.standard_normal((5, 2))
    np.testing.assert_allclose(model.predict(X), ref.predict(X), rtol=1e-13)
