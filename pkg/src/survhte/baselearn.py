"""Base learners: lasso, random-forest regression and logistic propensities.

All three are small from-scratch implementations.  ``make_base_learner``
returns an unfitted estimator with ``fit(X, y)`` / ``predict(X)``; with
``tune=True`` it picks hyperparameters by 5-fold CV over a fixed grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit

from . import _trees
from .rng import child_seed, generator

__all__ = [
    "LinearModel",
    "ForestModel",
    "PropensityModel",
    "fit_lasso",
    "fit_random_forest",
    "fit_logistic",
    "lasso_objective",
    "lasso_kkt_residual",
    "LassoRegressor",
    "ForestRegressor",
    "make_base_learner",
    "cv_folds",
    "LASSO_ALPHAS",
    "FOREST_GRID",
]

LASSO_ALPHAS = (0.001, 0.01, 0.1, 1.0, 10.0)
# strongest regularization first, so ties keep the earlier entry
FOREST_GRID = tuple((t, dep) for dep in (3, 5, None) for t in (50, 100))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("input contains non-finite values")


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


# --------------------------------------------------------------------- lasso

@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray
    alpha: float = 0.0
    n_sweeps: int = 0

    def predict(self, X):
        return self.intercept + _as_2d(X) @ self.coefficients


@njit(cache=True)
def _cd_gram(G, c, alpha, tol, max_sweeps):
    d = c.size
    beta = np.zeros(d)
    # grad_j = c_j - sum_k G_jk beta_k, kept up to date incrementally
    resid = c.copy()
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(d):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = resid[j] + gjj * beta[j]
            if rho > alpha:
                new = (rho - alpha) / gjj
            elif rho < -alpha:
                new = (rho + alpha) / gjj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                for k in range(d):
                    resid[k] -= G[k, j] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change < tol:
            break
    return beta, sweeps


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 1e-12 * (1.0 + np.abs(mu)), sd, 0.0)
    return mu, sd


def fit_lasso(X, y, alpha, tol=1e-7, max_sweeps=10_000):
    """L1-penalized least squares by cyclic coordinate descent.

    Minimizes ``(1/2n)|y - b0 - Z b|^2 + alpha |b|_1`` where ``Z`` is ``X``
    standardized to zero mean and unit variance; the returned coefficients
    are mapped back to the original feature scale.  Constant columns get a
    zero coefficient.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise ValueError("need n >= 1 rows with matching y")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    _check_finite(X, y)
    n = X.shape[0]
    mu, sd = _standardize(X)
    scale = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / scale
    Z[:, sd == 0] = 0.0
    ybar = y.mean()
    G = Z.T @ Z / n
    c = Z.T @ (y - ybar) / n
    beta_z, sweeps = _cd_gram(G, c, float(alpha), tol, max_sweeps)
    coef = np.where(sd > 0, beta_z / scale, 0.0)
    return LinearModel(float(ybar - mu @ coef), coef, float(alpha), int(sweeps))


def lasso_objective(X, y, model):
    """Objective on the standardized scale used by :func:`fit_lasso`."""
    X = _as_2d(X)
    mu, sd = _standardize(X)
    r = y - model.predict(X)
    b_z = model.coefficients * np.where(sd > 0, sd, 0.0)
    return 0.5 * np.mean(r**2) + model.alpha * np.abs(b_z).sum()


def lasso_kkt_residual(X, y, model):
    """Largest violation of the lasso optimality conditions.

    For zero coefficients the bound is ``|Z_j' r / n| <= alpha``; for active
    ones the correlation must equal ``alpha * sign(b_j)``.
    """
    X = _as_2d(X)
    mu, sd = _standardize(X)
    Z = (X - mu) / np.where(sd > 0, sd, 1.0)
    Z[:, sd == 0] = 0.0
    r = np.asarray(y, dtype=float) - model.predict(X)
    g = Z.T @ r / X.shape[0]
    b = model.coefficients
    viol = np.where(b == 0, np.maximum(np.abs(g) - model.alpha, 0.0),
                    np.abs(g - model.alpha * np.sign(b)))
    return float(viol.max()) if viol.size else 0.0


# -------------------------------------------------------------------- forest

@dataclass(frozen=True)
class ForestModel:
    trees: list
    n_trees: int
    max_depth: int | None
    min_leaf: int
    feature_subsample: float

    def predict(self, X, n_trees=None):
        X = np.ascontiguousarray(_as_2d(X))
        use = self.trees if n_trees is None else self.trees[:n_trees]
        out = np.zeros(X.shape[0])
        for feat, thr, left, right, value in use:
            out += value[_trees.apply_tree(feat, thr, left, right, X)]
        return out / len(use)

    @property
    def n_leaves(self):
        return [int(np.sum(t[0] < 0)) for t in self.trees]


def _mtry(d):
    return max(1, int(np.floor(np.sqrt(d))))


def fit_random_forest(X, y, params=None, **kw):
    """Bagged CART regression trees with sqrt(d) features tried per split.

    ``params`` keys: ``n_trees`` (100), ``max_depth`` (None = unbounded),
    ``min_split`` (2), ``min_leaf`` (1), ``seed`` (0), ``bootstrap`` (True).
    """
    p = {"n_trees": 100, "max_depth": None, "min_split": 2, "min_leaf": 1,
         "seed": 0, "bootstrap": True}
    p.update(params or {})
    p.update(kw)
    X = np.ascontiguousarray(_as_2d(X))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    n, d = X.shape
    _check_finite(X, y)
    if n < 1:
        raise ValueError("not enough rows to fit a forest")
    depth = -1 if p["max_depth"] is None else int(p["max_depth"])
    mtry = _mtry(d)
    trees = []
    for t in range(int(p["n_trees"])):
        if p["bootstrap"]:
            sample = _trees.bootstrap_indices(n, np.uint64(child_seed(p["seed"], "boot", t)))
        else:
            sample = np.arange(n)
        trees.append(_trees.build_regression_tree(
            X, y, sample, depth, int(p["min_split"]), int(p["min_leaf"]), mtry,
            np.uint64(child_seed(p["seed"], "feat", t))))
    return ForestModel(trees, int(p["n_trees"]), p["max_depth"], int(p["min_leaf"]),
                       mtry / d)


# ---------------------------------------------------------------- propensity

@dataclass(frozen=True)
class PropensityModel:
    intercept: float
    coefficients: np.ndarray
    clip: tuple = (0.01, 0.99)
    n_iter: int = 0

    def predict(self, X):
        eta = self.intercept + _as_2d(X) @ self.coefficients
        return np.clip(expit(eta), self.clip[0], self.clip[1])

    def predict_proba(self, X):
        return self.predict(X)


def _loglik(eta, w):
    # sum of w*eta - log(1 + e^eta), computed stably
    return float(np.sum(w * eta - np.logaddexp(0.0, eta)))


def fit_logistic(X, w, clip=(0.01, 0.99), tol=1e-8, max_iter=100, jitter=1e-8):
    """Maximum-likelihood logistic regression by damped Newton steps.

    Features are standardized for conditioning.  Each step is halved until
    the log-likelihood does not decrease, so the iterates are monotone.
    Separable data stops once the step stops improving the likelihood.
    """
    X = _as_2d(X)
    w = np.asarray(w, dtype=float)
    _check_finite(X, w)
    lo, hi = clip
    if not 0 <= lo < hi <= 1:
        raise ValueError("clip must satisfy 0 <= lo < hi <= 1")
    rate = w.mean() if w.size else 0.5
    if w.size == 0 or np.all(w == w[0]):
        p = float(np.clip(rate, lo, hi))
        eta = np.log(p) - np.log1p(-p) if 0 < p < 1 else np.sign(p - 0.5) * np.inf
        return PropensityModel(float(eta), np.zeros(X.shape[1]), (lo, hi), 0)
    mu, sd = _standardize(X)
    Z = (X - mu) / np.where(sd > 0, sd, 1.0)
    Z[:, sd == 0] = 0.0
    A = np.column_stack((np.ones(len(w)), Z))
    beta = np.zeros(A.shape[1])
    beta[0] = np.log(rate) - np.log1p(-rate)
    eta = A @ beta
    ll = _loglik(eta, w)
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        grad = A.T @ (w - p)
        if np.max(np.abs(grad)) / len(w) < tol:
            break
        H = (A * (p * (1 - p))[:, None]).T @ A
        H[np.diag_indices_from(H)] += jitter * max(1.0, np.trace(H) / H.shape[0])
        step = np.linalg.solve(H, grad)
        t = 1.0
        improved = False
        while t > 1e-10:
            cand = beta + t * step
            eta_c = A @ cand
            ll_c = _loglik(eta_c, w)
            if ll_c >= ll:
                improved = ll_c > ll
                beta, eta, ll = cand, eta_c, ll_c
                break
            t *= 0.5
        if not improved:
            break
    scale = np.where(sd > 0, sd, 1.0)
    coef = np.where(sd > 0, beta[1:] / scale, 0.0)
    return PropensityModel(float(beta[0] - mu @ coef), coef, (lo, hi), it)


# ----------------------------------------------------------- tuned wrappers

def cv_folds(n, k, seed):
    """Fold label per row from a seeded permutation (sizes differ by <= 1)."""
    perm = generator(seed, "folds", n, k).permutation(n)
    lab = np.empty(n, dtype=np.int64)
    lab[perm] = np.arange(n) % k
    return lab


class LassoRegressor:
    """Lasso with ``alpha`` fixed or chosen by k-fold CV over ``alphas``."""

    name = "lasso"

    def __init__(self, alpha=None, alphas=LASSO_ALPHAS, n_folds=5, seed=0):
        self.alpha = alpha
        self.alphas = tuple(alphas)
        self.n_folds = n_folds
        self.seed = seed

    def fit(self, X, y):
        X = _as_2d(X)
        y = np.asarray(y, dtype=float)
        alpha = self.alpha
        if alpha is None:
            alpha = self._select(X, y)
        self.alpha_ = alpha
        self.model_ = fit_lasso(X, y, alpha)
        return self

    def _select(self, X, y):
        n = len(y)
        k = min(self.n_folds, n)
        if k < 2:
            return max(self.alphas)
        lab = cv_folds(n, k, self.seed)
        # strongest first: a later alpha must be strictly better to win
        order = sorted(self.alphas, reverse=True)
        err = np.zeros(len(order))
        for f in range(k):
            tr, te = lab != f, lab == f
            for i, a in enumerate(order):
                m = fit_lasso(X[tr], y[tr], a)
                err[i] += np.sum((y[te] - m.predict(X[te])) ** 2)
        return order[int(np.argmin(err))]

    def predict(self, X):
        return self.model_.predict(X)


class ForestRegressor:
    """Random forest with fixed params or CV over ``FOREST_GRID``.

    During CV a 100-tree forest also scores its first 50 trees, which is
    exactly the 50-tree forest with the same seed.
    """

    name = "rf"

    def __init__(self, n_trees=None, max_depth=None, min_split=2, min_leaf=1,
                 n_folds=5, seed=0, grid=FOREST_GRID):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_split = min_split
        self.min_leaf = min_leaf
        self.n_folds = n_folds
        self.seed = seed
        self.grid = tuple(grid)

    def _params(self, n_trees, depth):
        return {"n_trees": n_trees, "max_depth": depth, "min_split": self.min_split,
                "min_leaf": self.min_leaf, "seed": self.seed}

    def fit(self, X, y):
        X = _as_2d(X)
        y = np.asarray(y, dtype=float)
        if self.n_trees is None:
            n_trees, depth = self._select(X, y)
        else:
            n_trees, depth = self.n_trees, self.max_depth
        self.params_ = self._params(n_trees, depth)
        self.model_ = fit_random_forest(X, y, self.params_)
        return self

    def _select(self, X, y):
        n = len(y)
        k = min(self.n_folds, n)
        if k < 2:
            return self.grid[0]
        lab = cv_folds(n, k, self.seed)
        err = np.zeros(len(self.grid))
        depths = []
        for _, dep in self.grid:
            if dep not in depths:
                depths.append(dep)
        for f in range(k):
            tr, te = lab != f, lab == f
            for dep in depths:
                cells = [i for i, g in enumerate(self.grid) if g[1] == dep]
                big = max(self.grid[i][0] for i in cells)
                m = fit_random_forest(X[tr], y[tr], self._params(big, dep))
                for i in cells:
                    pred = m.predict(X[te], n_trees=self.grid[i][0])
                    err[i] += np.sum((y[te] - pred) ** 2)
        return self.grid[int(np.argmin(err))]

    def predict(self, X):
        return self.model_.predict(X)


def make_base_learner(name, seed=0, tune=True, **params):
    """Unfitted regressor by name: ``"lasso"`` or ``"rf"``."""
    if name == "lasso":
        if not tune and "alpha" not in params:
            params["alpha"] = 0.01
        return LassoRegressor(seed=seed, **params)
    if name in ("rf", "random_forest"):
        if not tune:
            params.setdefault("n_trees", 100)
        return ForestRegressor(seed=seed, **params)
    raise ValueError(f"unknown base learner {name!r}")
