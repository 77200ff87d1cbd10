import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from owarr import DomainDataset, Hyperparams, RankDeficientError, train_base
from owarr.core import (SolveInputs, approx_corr, build_solve_inputs, conditional_mmd,
                        gradient, marginal_mmd, objective, solve_alpha, solve_system,
                        target_weight)
from owarr.fuzzy import MembershipTable, label_memberships


def random_pair(rng, n, m, d, shift=0.5):
    Xs = rng.standard_normal((n, d))
    Xt = rng.standard_normal((m, d)) + shift
    beta = rng.standard_normal(d)
    ys = np.clip(0.5 + 0.2 * Xs @ beta / np.sqrt(d) + 0.05 * rng.standard_normal(n), 0, 1)
    yt = np.clip(0.5 + 0.2 * Xt @ beta / np.sqrt(d) + 0.05 * rng.standard_normal(m), 0, 1)
    return DomainDataset("s", Xs, ys), (DomainDataset("t", Xt, yt) if m else None)


def test_target_weight_examples():
    assert target_weight(0.2, 1200, 5) == 48
    assert target_weight(0.2, 100, 100) == 2
    assert target_weight(1.0, 10, 5) == 2
    assert target_weight(0.2, 10, 0) is None


def test_marginal_mmd_examples():
    np.testing.assert_array_equal(marginal_mmd(1, 1), [[1, -1], [-1, 1]])
    np.testing.assert_allclose(marginal_mmd(2, 1), [[.25, .25, -.5], [.25, .25, -.5],
                                                    [-.5, -.5, 1]])
    with pytest.raises(ValueError):
        marginal_mmd(3, 0)


@given(st.integers(1, 30), st.integers(1, 30))
def test_marginal_mmd_structure(n, m):
    M = marginal_mmd(n, m)
    np.testing.assert_allclose(M, oracles.marginal_mmd(n, m), atol=1e-15)
    assert abs(M.sum()) < 1e-12
    np.testing.assert_array_equal(M, M.T)
    ev = np.linalg.eigvalsh(M)
    assert ev.min() > -1e-12
    assert np.linalg.matrix_rank(M, tol=1e-10) == 1


def test_conditional_mmd_single_medium():
    one = MembershipTable(np.array([[0.0, 1.0, 0.0]]))
    M = conditional_mmd(one, one)
    np.testing.assert_array_equal(M, [[1, -1], [-1, 1]])


def test_conditional_mmd_zero_column_kept():
    a = MembershipTable(np.array([[1.0, 0.0], [0.0, 1.0]]))
    b = MembershipTable(np.array([[1.0, 0.0]]), empty=(1,))
    M = conditional_mmd(a, b)
    expected = np.outer([1, 0, -1], [1, 0, -1]) + np.outer([0, 1, 0], [0, 1, 0])
    np.testing.assert_array_equal(M, expected)


def test_conditional_mmd_class_mismatch():
    with pytest.raises(ValueError, match="class count"):
        conditional_mmd(MembershipTable(np.ones((2, 3)) / 2), MembershipTable(np.ones((2, 2)) / 2))


def test_conditional_mmd_double_loop(rng):
    for _ in range(5):
        ys, yt = rng.uniform(size=5), rng.uniform(size=3)
        a, b = label_memberships(ys, 3), label_memberships(yt, 3)
        M = conditional_mmd(a, b)
        ref = oracles.conditional_mmd(oracles.normalized_table(ys), oracles.normalized_table(yt))
        assert np.max(np.abs(M - ref)) <= 1e-14
        np.testing.assert_array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() > -1e-12


def test_ols_reduction(rng):
    X = rng.standard_normal((40, 3))
    y = X @ [1.0, -2.0, 0.5] + 0.1 * rng.standard_normal(40)
    Xc, yc = X - X.mean(0), y - y.mean()
    inp = SolveInputs(Xc, yc, np.ones(40), None, None, 0.0, 0.0)
    ols = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    alpha = solve_alpha(inp)
    assert np.linalg.norm(alpha - ols) <= 1e-10 * np.linalg.norm(ols)


def test_zero_labels_give_zero_alpha(rng):
    X = rng.standard_normal((20, 3))
    inp = SolveInputs(X - X.mean(0), np.zeros(20), np.ones(20), marginal_mmd(15, 5), None,
                      10.0, 0.0)
    np.testing.assert_array_equal(solve_alpha(inp), 0.0)


def test_solve_matches_numerical_minimizer(rng):
    src, tgt = random_pair(rng, 30, 10, 4)
    hp = Hyperparams()
    prob = oracles.Problem(src.features, src.labels, tgt.features, tgt.labels,
                           hp.sigma, hp.lam, hp.gamma)
    ref = prob.minimizer()
    inputs, _, _ = build_solve_inputs(src, tgt, hp)
    alpha = solve_alpha(inputs)
    assert np.linalg.norm(alpha - ref) <= 1e-6 * np.linalg.norm(ref)
    model = train_base(src, tgt, hp)
    assert np.linalg.norm(model.alpha - ref) <= 1e-6 * np.linalg.norm(ref)
    # objective agrees with the independent dense form
    assert objective(alpha, inputs) == pytest.approx(prob.objective(alpha), rel=1e-10)


def test_scipy_minimizer_agrees(rng):
    from scipy.optimize import minimize
    src, tgt = random_pair(rng, 25, 6, 3)
    hp = Hyperparams()
    prob = oracles.Problem(src.features, src.labels, tgt.features, tgt.labels,
                           hp.sigma, hp.lam, hp.gamma)
    res = minimize(prob.objective, np.zeros(3), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
    alpha = train_base(src, tgt, hp).alpha
    np.testing.assert_allclose(alpha, res.x, rtol=1e-4, atol=1e-6)


def test_objective_descent_and_gradient(rng):
    src, tgt = random_pair(rng, 40, 12, 5)
    hp = Hyperparams()
    inputs, _, _ = build_solve_inputs(src, tgt, hp)
    alpha = solve_alpha(inputs)
    f0 = objective(alpha, inputs)
    for _ in range(100):
        delta = rng.standard_normal(alpha.size)
        delta *= 1e-3 * np.linalg.norm(alpha) / np.linalg.norm(delta)
        assert f0 <= objective(alpha + delta, inputs)
    A, b = inputs.system()
    scale = np.linalg.norm(b) + np.linalg.norm(A) * np.linalg.norm(alpha)
    g = gradient(alpha, inputs)
    assert np.linalg.norm(g) < 1e-8 * scale
    # analytic gradient against central differences at a generic point
    a = alpha + rng.standard_normal(alpha.size)
    h = 1e-5
    fd = np.array([(objective(a + h * e, inputs) - objective(a - h * e, inputs)) / (2 * h)
                   for e in np.eye(alpha.size)])
    np.testing.assert_allclose(gradient(a, inputs), fd, rtol=1e-6, atol=1e-6)


def test_approx_corr():
    y = np.array([0.6, 0.8])
    assert approx_corr(y, y) == pytest.approx(0.0, abs=1e-15)
    assert approx_corr(y, np.zeros(2)) == 0.0
    with pytest.raises(ValueError):
        approx_corr(np.zeros(2), y)


@given(st.integers(0, 2**32 - 1))
def test_approx_corr_matches_dense(seed):
    r = np.random.default_rng(seed)
    y, yh = r.standard_normal(8), r.standard_normal(8)
    dense = yh @ (np.outer(y, y) - np.eye(8)) @ yh / (y @ y)
    assert approx_corr(y, yh) == pytest.approx(dense, rel=1e-12, abs=1e-12)


def test_identical_target_is_wls(rng):
    src, _ = random_pair(rng, 30, 0, 3)
    tgt = DomainDataset("t", src.features, src.labels)
    hp = Hyperparams(sigma=2.0, lam=0.0, gamma=0.0)
    assert target_weight(hp.sigma, 30, 30) == 2
    model = train_base(src, tgt, hp)
    X = np.vstack([src.features, tgt.features])
    y = np.concatenate([src.labels, tgt.labels])
    w = np.r_[np.ones(30), 2 * np.ones(30)]
    icpt, coef = oracles.wls(X, y, w)
    np.testing.assert_allclose(model.alpha, coef, rtol=1e-10)
    np.testing.assert_allclose(model.predict(X), icpt + X @ coef, rtol=1e-10, atol=1e-12)


def test_weighted_structure_without_mmd(rng):
    # M_P = M_Q = 0, gamma = 0: weighted least squares on the centered stack
    src, tgt = random_pair(rng, 50, 8, 3)
    hp = Hyperparams(lam=0.0, gamma=0.0)
    model = train_base(src, tgt, hp)
    X = np.vstack([src.features, tgt.features])
    y = np.concatenate([src.labels, tgt.labels])
    Xc, yc = X - X.mean(0), y - y.mean()
    w = np.r_[np.ones(50), np.full(8, target_weight(0.2, 50, 8))]
    coef = np.linalg.lstsq(Xc * np.sqrt(w)[:, None], yc * np.sqrt(w), rcond=None)[0]
    np.testing.assert_allclose(model.alpha, coef, rtol=1e-10)


def test_m_zero_source_only(rng):
    src, _ = random_pair(rng, 40, 0, 3)
    hp = Hyperparams()
    model = train_base(src, None, hp)
    prob = oracles.Problem(src.features, src.labels, np.zeros((0, 3)), np.zeros(0),
                           hp.sigma, hp.lam, hp.gamma)
    np.testing.assert_allclose(model.alpha, prob.minimizer(), rtol=1e-6)
    np.testing.assert_allclose(model.feature_means, src.features.mean(0))


def test_linear_domain_rmse(rng):
    beta = np.array([0.05, -0.03, 0.02, 0.04])
    X = rng.standard_normal((500, 4))
    noise = 0.01
    y = 0.5 + X @ beta + noise * rng.standard_normal(500)
    src = DomainDataset("lin", X, y)
    model = train_base(src, None, Hyperparams(gamma=0.0))
    assert model.train_rmse <= 2 * noise
    np.testing.assert_allclose(model.alpha, beta, atol=0.005)


def test_label_shift_invariance(rng):
    src, tgt = random_pair(rng, 40, 10, 3)
    hp = Hyperparams()
    c = 0.37
    m1 = train_base(src, tgt, hp)
    m2 = train_base(DomainDataset("s", src.features, src.labels + c),
                    DomainDataset("t", tgt.features, tgt.labels + c), hp)
    X = rng.standard_normal((10, 3))
    np.testing.assert_allclose(m2.predict(X), m1.predict(X) + c, atol=1e-12)


def test_constant_labels_warn(rng):
    src = DomainDataset("s", rng.standard_normal((20, 2)), np.full(20, 0.5))
    with pytest.warns(RuntimeWarning, match="constant"):
        model = train_base(src, None, Hyperparams())
    np.testing.assert_allclose(model.predict(src.features), 0.5)


def test_rank_deficient_raises():
    with pytest.raises(RankDeficientError):
        solve_system(np.zeros((2, 2)), np.zeros(2))


def test_ill_conditioned_jitter(rng):
    # d > n + m: singular Gram matrix rescued by one jitter step
    src = DomainDataset("s", rng.standard_normal((3, 6)), [0.1, 0.5, 0.9])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = train_base(src, None, Hyperparams(gamma=0.0))
    assert np.all(np.isfinite(model.alpha))


def test_dimension_mismatch(rng):
    from owarr import DataError
    src, _ = random_pair(rng, 10, 0, 3)
    with pytest.raises(DataError):
        train_base(src, DomainDataset("t", np.zeros((2, 2)), [0.1, 0.2]), Hyperparams())


def test_model_serialization(rng):
    from owarr import BaseModel
    src, tgt = random_pair(rng, 20, 5, 2)
    m = train_base(src, tgt, Hyperparams())
    back = BaseModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.alpha, m.alpha)
    assert back.train_rmse == m.train_rmse and back.source_id == "s"
