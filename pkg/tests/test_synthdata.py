import numpy as np
import pytest

from owarr.ensemble import bl1_train
from owarr.datamodel import Hyperparams
from owarr.evaluation import rmse
from owarr.synthdata import (GeneratorConfig, bootstrap_domain, generate, generate_domain,
                             near_far_domains, write_domains)


def small(**kw):
    base = dict(num_domains=4, epochs_per_domain=300, dim=5)
    base.update(kw)
    return GeneratorConfig(**base)


def test_same_seed_bit_identical():
    a, b = generate(small(seed=9)), generate(small(seed=9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.features, y.features)
        np.testing.assert_array_equal(x.labels, y.labels)
    c = generate(small(seed=10))
    assert not np.array_equal(a[0].features, c[0].features)


def test_domain_streams_independent():
    cfg = small()
    doms = generate(cfg)
    more = generate(small(num_domains=6))
    for k in range(cfg.num_domains):
        np.testing.assert_array_equal(doms[k].features, more[k].features)
        np.testing.assert_array_equal(generate_domain(cfg, k).labels, doms[k].labels)


def test_labels_in_unit_interval():
    for ds in generate(small(noise_std=0.5, conditional_shift=2.0)):
        assert ds.labels.min() >= 0 and ds.labels.max() <= 1


def test_no_shift_shares_one_law():
    # with both shifts zero every domain follows logit(y) = beta0 . x
    cfg = small(marginal_shift=0.0, conditional_shift=0.0, noise_std=0.0, feature_noise=0.0)
    coefs = []
    for ds in generate(cfg):
        z = np.log(ds.labels / (1 - ds.labels))
        coefs.append(np.linalg.lstsq(ds.features, z, rcond=None)[0])
    for c in coefs[1:]:
        np.testing.assert_allclose(c, coefs[0], atol=1e-8)


def test_exact_function_pooled_ridge():
    cfg = small(marginal_shift=0.0, conditional_shift=0.0, noise_std=0.0, feature_noise=0.0,
                epochs_per_domain=600)
    doms = generate(cfg)
    model = bl1_train(doms, Hyperparams())
    X = np.vstack([d.features for d in doms])
    y = np.concatenate([d.labels for d in doms])
    assert rmse(y, model.predict(X)) < 0.02


def test_marginal_shift_moves_means():
    doms = generate(small(marginal_shift=5.0, num_domains=2))
    gap = np.linalg.norm(doms[0].features.mean(0) - doms[1].features.mean(0))
    assert gap > 3.0


def test_near_far_layout():
    target, sources, near = near_far_domains(small(), n_near=3, n_far=2)
    assert len(sources) == 5 and near == [s.id for s in sources[:3]]
    mt = target.features.mean(0)
    dn = [np.linalg.norm(s.features.mean(0) - mt) for s in sources]
    assert max(dn[:3]) < min(dn[3:])


def test_bootstrap_and_write(tmp_path):
    ds = generate(small(num_domains=1))[0]
    b = bootstrap_domain(ds, np.random.default_rng(0), "boot")
    assert b.id == "boot" and b.features.shape == ds.features.shape
    rows = {tuple(r) for r in ds.features}
    assert all(tuple(r) in rows for r in b.features)
    paths = write_domains(generate(small(num_domains=2)), tmp_path)
    assert [p.name for p in paths] == ["d00.csv", "d01.csv"]


@pytest.mark.parametrize("bad", [dict(num_domains=0), dict(dim=0), dict(noise_std=-1),
                                 dict(temporal_correlation=1.0), dict(feature_noise=1.5)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        small(**bad)
