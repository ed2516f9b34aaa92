import numpy as np
import pytest

from survhte.baselearn import (FOREST_GRID, ForestRegressor, LassoRegressor, cv_folds,
                               fit_lasso, fit_logistic, fit_random_forest,
                               lasso_kkt_residual, lasso_objective, make_base_learner)
from survhte.metrics import auc


def _standardized(X):
    mu, sd = X.mean(0), X.std(0)
    return (X - mu) / sd


def subgradient_oracle(X, y, alpha, iters=200_000):
    """Projected (proximal) gradient on the standardized problem, run long."""
    Z = _standardized(X)
    n = len(y)
    yc = y - y.mean()
    L = np.linalg.eigvalsh(Z.T @ Z / n).max()
    b = np.zeros(Z.shape[1])
    for _ in range(iters):
        g = Z.T @ (Z @ b - yc) / n
        v = b - g / L
        b = np.sign(v) * np.maximum(np.abs(v) - alpha / L, 0)
    r = yc - Z @ b
    return 0.5 * np.mean(r**2) + alpha * np.abs(b).sum()


def test_lasso_interpolates_noiseless_line():
    x = np.random.default_rng(0).uniform(size=(100, 1))
    m = fit_lasso(x, 2 * x[:, 0] + 1, 0.0)
    assert m.coefficients[0] == pytest.approx(2, abs=1e-6)
    assert m.intercept == pytest.approx(1, abs=1e-6)


def test_lasso_full_shrinkage():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    y = X @ [1.0, 2.0, -1.0] + rng.normal(size=50)
    Z = _standardized(X)
    alpha = np.abs(Z.T @ (y - y.mean())).max() / 50
    m = fit_lasso(X, y, alpha * 1.0001)
    assert np.all(m.coefficients == 0) and m.intercept == pytest.approx(y.mean())


def test_lasso_objective_matches_oracle():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    y = X @ [1.5, 0.0, -0.7] + 0.5 * rng.normal(size=40)
    m = fit_lasso(X, y, 0.1)
    ref = subgradient_oracle(X, y, 0.1)
    assert lasso_objective(X, y, m) == pytest.approx(ref, rel=1e-6)


def test_lasso_kkt():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 8))
    y = X[:, 0] - 2 * X[:, 3] + rng.normal(size=200)
    for a in (0.001, 0.05, 0.5):
        assert lasso_kkt_residual(X, y, fit_lasso(X, y, a)) <= 1e-6


def test_lasso_rejects_non_finite():
    with pytest.raises(ValueError):
        fit_lasso(np.array([[1.0], [np.nan]]), np.array([1.0, 2.0]), 0.1)


def test_forest_constant_target():
    X = np.random.default_rng(0).uniform(size=(50, 3))
    f = fit_random_forest(X, np.full(50, 3.5), n_trees=5)
    assert np.allclose(f.predict(X), 3.5)


def test_forest_single_split_step():
    x = np.random.default_rng(1).uniform(size=(200, 1))
    y = (x[:, 0] > 0.5).astype(float)
    f = fit_random_forest(x, y, n_trees=1, max_depth=1, bootstrap=False, seed=0)
    assert np.mean((f.predict(x) - y) ** 2) < 0.01
    # brute-force best split: every midpoint, minimum total SSE
    xs = np.sort(x[:, 0])
    cands = 0.5 * (xs[:-1] + xs[1:])
    sse = [np.var(y[x[:, 0] <= c]) * np.sum(x[:, 0] <= c)
           + np.var(y[x[:, 0] > c]) * np.sum(x[:, 0] > c) for c in cands]
    feat, thr = f.trees[0][0], f.trees[0][1]
    assert feat[0] == 0 and thr[0] == pytest.approx(cands[int(np.argmin(sse))])


def test_forest_deterministic_and_bounded():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(300, 4))
    y = np.sin(5 * X[:, 0]) + rng.normal(size=300)
    a = fit_random_forest(X, y, n_trees=20, seed=5, min_leaf=3)
    b = fit_random_forest(X, y, n_trees=20, seed=5, min_leaf=3)
    Xn = rng.uniform(size=(100, 4))
    assert np.array_equal(a.predict(Xn), b.predict(Xn))
    assert a.predict(Xn).min() >= y.min() and a.predict(Xn).max() <= y.max()


def test_forest_min_leaf_respected():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(300, 2))
    y = rng.normal(size=300)
    f = fit_random_forest(X, y, n_trees=3, min_leaf=7, bootstrap=False)
    for feat, thr, left, right, value in f.trees:
        leaves = _trees_leaf_counts(feat, thr, left, right, X)
        assert min(leaves) >= 7


def _trees_leaf_counts(feat, thr, left, right, X):
    from survhte import _trees
    ids = _trees.apply_tree(feat, thr, left, right, np.ascontiguousarray(X))
    return np.bincount(ids)[np.bincount(ids) > 0]


def test_logistic_coin_labels():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(10_000, 2))
    w = rng.integers(0, 2, 10_000)
    p = fit_logistic(X, w).predict(X)
    assert np.all(np.abs(p - 0.5) < 0.02)


def test_logistic_separable():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(500, 2))
    w = (X[:, 0] > 0.5).astype(int)
    p = fit_logistic(X, w, clip=(0.01, 0.99)).predict(X)
    assert p.min() >= 0.01 and p.max() <= 0.99
    assert auc(p, w) > 0.99


def test_logistic_single_class():
    X = np.random.default_rng(6).uniform(size=(20, 2))
    assert np.allclose(fit_logistic(X, np.ones(20)).predict(X), 0.99)
    assert np.allclose(fit_logistic(X, np.zeros(20)).predict(X), 0.01)


def test_logistic_matches_mle_reference():
    from scipy.optimize import minimize
    rng = np.random.default_rng(7)
    X = rng.normal(size=(400, 2))
    w = (rng.uniform(size=400) < 1 / (1 + np.exp(-(0.3 + X @ [1.0, -0.5])))).astype(int)
    m = fit_logistic(X, w, clip=(0.0, 1.0))
    A = np.column_stack((np.ones(400), X))
    nll = lambda b: np.sum(np.logaddexp(0, A @ b) - w * (A @ b))
    ref = minimize(nll, np.zeros(3), method="BFGS", options={"gtol": 1e-10}).x
    assert np.allclose([m.intercept, *m.coefficients], ref, atol=1e-5)


def test_cv_folds_balanced_and_seeded():
    lab = cv_folds(103, 5, 1)
    assert np.bincount(lab).max() - np.bincount(lab).min() <= 1
    assert np.array_equal(lab, cv_folds(103, 5, 1))


def test_lasso_cv_prefers_stronger_penalty_on_ties():
    X = np.random.default_rng(8).uniform(size=(60, 2))
    m = LassoRegressor().fit(X, np.full(60, 2.0))
    assert m.alpha_ == 10.0


def test_forest_cv_grid_first_entry_on_constant():
    X = np.random.default_rng(9).uniform(size=(60, 2))
    m = ForestRegressor().fit(X, np.full(60, 1.0))
    assert (m.params_["n_trees"], m.params_["max_depth"]) == FOREST_GRID[0]


def test_make_base_learner():
    assert make_base_learner("lasso").name == "lasso"
    assert make_base_learner("rf", tune=False).n_trees == 100
    with pytest.raises(ValueError):
        make_base_learner("xgboost")
