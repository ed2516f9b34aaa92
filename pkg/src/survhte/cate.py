"""CATE estimators: imputed meta-learners, Double-ML, survival meta-learners.

Imputed meta-learners and Double-ML regress a fully observed surrogate
outcome (see :mod:`survhte.impute`).  Survival meta-learners work on the
censored data directly through random survival forests and report the
effect on RMST or on the survival probability at a horizon ``h``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .baselearn import cv_folds, fit_logistic, make_base_learner
from .datagen import Estimand
from .rng import child_seed, generator
from .rsf import fit_rsf

__all__ = [
    "Family",
    "Variant",
    "CateModel",
    "fit_imputed_meta",
    "fit_double_ml",
    "fit_survival_meta",
    "write_cate_csv",
]


class Family(str, enum.Enum):
    IMPUTED_META = "IMPUTED_META"
    DOUBLE_ML = "DOUBLE_ML"
    SURV_META = "SURV_META"


class Variant(str, enum.Enum):
    S = "S"
    T = "T"
    X = "X"
    DR = "DR"
    MATCHING = "MATCHING"


@dataclass
class CateModel:
    """A fitted estimator; ``predict(X)`` returns tau_hat(x).

    ``parts`` keeps the fitted components (outcome models, propensity,
    effect models, final-stage coefficients, survival forests, ...).
    """

    family: Family
    variant: Variant | None  # None for Double-ML
    parts: dict
    estimand: Estimand | None = None
    horizon: float | None = None
    info: dict = field(default_factory=dict)

    def predict(self, X):
        return np.asarray(self.parts["_predict"](np.atleast_2d(np.asarray(X, dtype=float))),
                          dtype=float)

    def arm_means(self, X):
        """Per-arm predictions (mu0(x), mu1(x)) where the estimator has them."""
        fn = self.parts.get("_arm_means")
        if fn is None:
            raise AttributeError("this estimator exposes no per-arm map")
        return fn(np.atleast_2d(np.asarray(X, dtype=float)))


_ARM_NAMES = {0: "control arm (w=0)", 1: "treated arm (w=1)"}


def _check_arms(w, need_both=True):
    for a in (0, 1):
        if need_both and not np.any(w == a):
            raise ValueError(f"{_ARM_NAMES[a]} is empty")


def _learner(spec, seed, tune):
    if callable(spec) and not isinstance(spec, str):
        return spec(seed)
    return make_base_learner(spec, seed=seed, tune=tune)


def _s_design(X, w, interactions):
    w = np.asarray(w, dtype=float).reshape(-1, 1)
    cols = [X, w]
    if interactions:
        cols.append(w * X)
    return np.hstack(cols)


def _propensity(X, w, clip, override):
    if override is None:
        return fit_logistic(X, w, clip=clip).predict
    if callable(override):
        return lambda Z: np.clip(override(Z), *clip)
    const = float(override)
    return lambda Z: np.full(Z.shape[0], np.clip(const, *clip))


# ------------------------------------------------------- imputed meta-learners

def fit_imputed_meta(variant, X, w, y, base_learner="lasso", seed=0, tune=True,
                     clip=(0.01, 0.99), n_folds=2, treatment_interactions=None,
                     propensity=None):
    """Fit an S/T/X/DR learner on surrogate outcomes.

    Parameters
    ----------
    variant : {"S", "T", "X", "DR"}
    X, w, y : covariates, binary treatment, imputed outcome
    base_learner : str or callable
        ``"lasso"`` / ``"rf"``, or ``seed -> unfitted regressor``.
    treatment_interactions : bool, optional
        S-variant only: append ``w * X`` to the design.  Defaults to True for
        the lasso (a linear model on ``(X, w)`` alone can only express a
        constant effect) and False otherwise.
    propensity : None, float or callable
        Replace the fitted logistic propensity (X and DR variants).
    n_folds : int
        Cross-fitting folds for the DR nuisances.
    """
    variant = Variant(variant)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w).astype(int)
    y = np.asarray(y, dtype=float)
    if not (X.shape[0] == w.size == y.size):
        raise ValueError("X, w and y must have the same number of rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("surrogate outcomes must be fully observed and finite")

    if variant is Variant.S:
        if treatment_interactions is None:
            treatment_interactions = base_learner == "lasso"
        m = _learner(base_learner, child_seed(seed, "mu"), tune).fit(
            _s_design(X, w, treatment_interactions), y)
        n_d = X.shape[1]

        def arms(Z):
            ones = np.ones(Z.shape[0])
            return (m.predict(_s_design(Z, 0 * ones, treatment_interactions)),
                    m.predict(_s_design(Z, ones, treatment_interactions)))
        parts = {"mu": m, "interactions": treatment_interactions, "n_features": n_d}
        return _meta(variant, parts, arms)

    _check_arms(w)
    if variant is Variant.T:
        mu = {a: _learner(base_learner, child_seed(seed, "mu"), tune).fit(X[w == a], y[w == a])
              for a in (0, 1)}
        return _meta(variant, {"mu0": mu[0], "mu1": mu[1]},
                     lambda Z: (mu[0].predict(Z), mu[1].predict(Z)))

    if variant is Variant.X:
        mu = {a: _learner(base_learner, child_seed(seed, "mu"), tune).fit(X[w == a], y[w == a])
              for a in (0, 1)}
        X1, X0 = X[w == 1], X[w == 0]
        d1 = y[w == 1] - mu[0].predict(X1)
        d0 = mu[1].predict(X0) - y[w == 0]
        tau1 = _learner(base_learner, child_seed(seed, "tau"), tune).fit(X1, d1)
        tau0 = _learner(base_learner, child_seed(seed, "tau"), tune).fit(X0, d0)
        g = _propensity(X, w, clip, propensity)

        def pred(Z):
            gz = g(Z)
            return gz * tau0.predict(Z) + (1.0 - gz) * tau1.predict(Z)
        parts = {"mu0": mu[0], "mu1": mu[1], "tau0": tau0, "tau1": tau1, "g": g,
                 "_predict": pred,
                 "_arm_means": lambda Z: (mu[0].predict(Z), mu[1].predict(Z))}
        return CateModel(Family.IMPUTED_META, variant, parts)

    if variant is Variant.DR:
        n = y.size
        lab = cv_folds(n, n_folds, child_seed(seed, "dr-folds"))
        mu0_hat = np.empty(n)
        mu1_hat = np.empty(n)
        g_hat = np.empty(n)
        for k in range(n_folds):
            tr, te = lab != k, lab == k
            if not np.any(te):
                continue
            wt, Xt, yt = w[tr], X[tr], y[tr]
            for a in (0, 1):
                if not np.any(wt == a):
                    raise ValueError(f"{_ARM_NAMES[a]} is empty in cross-fitting fold {k}")
            m0 = _learner(base_learner, child_seed(seed, "mu", k), tune).fit(Xt[wt == 0], yt[wt == 0])
            m1 = _learner(base_learner, child_seed(seed, "mu", k), tune).fit(Xt[wt == 1], yt[wt == 1])
            mu0_hat[te] = m0.predict(X[te])
            mu1_hat[te] = m1.predict(X[te])
            g_hat[te] = _propensity(Xt, wt, clip, propensity)(X[te])
        y1 = mu1_hat + (w == 1) * (y - mu1_hat) / g_hat
        y0 = mu0_hat + (w == 0) * (y - mu0_hat) / (1.0 - g_hat)
        final = _learner(base_learner, child_seed(seed, "final"), tune).fit(X, y1 - y0)
        parts = {"final": final, "pseudo1": y1, "pseudo0": y0, "g_hat": g_hat,
                 "_predict": final.predict}
        return CateModel(Family.IMPUTED_META, variant, parts)

    raise ValueError(f"variant {variant.value} is not an imputed meta-learner")


def _meta(variant, parts, arms, family=Family.IMPUTED_META, **kw):
    def pred(Z):
        m0, m1 = arms(Z)
        return m1 - m0
    parts = dict(parts, _predict=pred, _arm_means=arms)
    return CateModel(family, variant, parts, **kw)


# ------------------------------------------------------------------ Double-ML

def _dml_final(yt, wt, X):
    D = wt[:, None] * np.column_stack((np.ones(len(yt)), X))
    theta, *_ = np.linalg.lstsq(D, yt, rcond=None)
    return theta


def fit_double_ml(X, w, y, nuisance_learner="lasso", n_folds=2, seed=0, tune=True,
                  clip=(0.01, 0.99), n_boot=100, min_w_var=1e-8):
    """Partially linear Double-ML with a linear effect model.

    Nuisances q(x) = E[Y|X] and f(x) = P(W=1|X) are cross-fitted on
    ``n_folds`` seeded folds; the final stage solves
    ``min sum (Y~ - (theta0 + theta'x) W~)^2`` by least squares.  The ATE is
    the mean of tau_hat over the fitting sample with a percentile bootstrap
    interval from ``n_boot`` resamples of the final stage.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w).astype(int)
    y = np.asarray(y, dtype=float)
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    _check_arms(w)
    n = y.size
    lab = cv_folds(n, n_folds, child_seed(seed, "dml-folds"))
    q = np.empty(n)
    f = np.empty(n)
    for k in range(n_folds):
        tr, te = lab != k, lab == k
        q[te] = _learner(nuisance_learner, child_seed(seed, "q", k), tune).fit(
            X[tr], y[tr]).predict(X[te])
        f[te] = fit_logistic(X[tr], w[tr], clip=clip).predict(X[te])
    y_res = y - q
    w_res = w - f
    for k in range(n_folds):
        if np.var(w_res[lab == k]) < min_w_var:
            raise ValueError(f"residualized treatment has ~zero variance in fold {k} "
                             "(no overlap)")
    theta = _dml_final(y_res, w_res, X)
    xbar = X.mean(axis=0)
    ate = float(theta[0] + xbar @ theta[1:])
    rng = generator(seed, "dml-boot")
    boot = np.empty((n_boot, theta.size))
    for b in range(n_boot):
        idx = rng.integers(0, n, n)
        boot[b] = _dml_final(y_res[idx], w_res[idx], X[idx])
    boot_ate = boot[:, 0] + boot[:, 1:] @ xbar
    parts = {
        "theta": theta,
        "q_hat": q,
        "f_hat": f,
        "theta_ci": np.percentile(boot, [2.5, 97.5], axis=0),
        "theta_se": boot.std(axis=0, ddof=1),
        "ate": ate,
        "ate_ci": tuple(np.percentile(boot_ate, [2.5, 97.5])),
        "ate_se": float(boot_ate.std(ddof=1)),
        "_predict": lambda Z: theta[0] + Z @ theta[1:],
    }
    return CateModel(Family.DOUBLE_ML, None, parts,
                     info={"n_folds": n_folds})


# -------------------------------------------------- survival meta-learners

def _reduce(model, Z, estimand, h):
    if Estimand(estimand) is Estimand.RMST:
        return model.predict_rmst(Z, h)
    return model.predict_surv_prob(Z, h)


def fit_survival_meta(variant, X, w, times, events, rsf_params=None, estimand="RMST",
                      horizon=None, K=5, seed=0):
    """S, T or MATCHING learner on top of random survival forests.

    ``horizon`` defaults to the largest observed time.  MATCHING computes
    factual RMSTs from a pooled forest on ``(X, w)`` and compares each unit
    with the mean over its ``K`` nearest opposite-arm neighbours in
    standardized covariate space; new points borrow the estimate of their
    nearest training unit.
    """
    variant = Variant(variant)
    estimand = Estimand(estimand)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w).astype(int)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(int)
    h = float(times.max()) if horizon is None else float(horizon)
    params = dict(rsf_params or {})
    params.setdefault("seed", child_seed(seed, "rsf"))
    kw = {"estimand": estimand, "horizon": h}

    if variant is Variant.S:
        m = fit_rsf(np.column_stack((X, w)), times, events, params)

        def arms(Z):
            ones = np.ones((Z.shape[0], 1))
            return (_reduce(m, np.hstack((Z, 0 * ones)), estimand, h),
                    _reduce(m, np.hstack((Z, ones)), estimand, h))
        return _meta(variant, {"rsf": m}, arms, Family.SURV_META, **kw)

    if variant is Variant.T:
        _check_arms(w)
        models = {}
        for a in (0, 1):
            sel = w == a
            if events[sel].sum() == 0:
                raise ValueError(f"{_ARM_NAMES[a]} has no events")
            models[a] = fit_rsf(X[sel], times[sel], events[sel], params)
        return _meta(variant, {"rsf0": models[0], "rsf1": models[1]},
                     lambda Z: (_reduce(models[0], Z, estimand, h),
                                _reduce(models[1], Z, estimand, h)),
                     Family.SURV_META, **kw)

    if variant is Variant.MATCHING:
        _check_arms(w)
        m = fit_rsf(np.column_stack((X, w)), times, events, params)
        mu_fact = _reduce(m, np.column_stack((X, w)), estimand, h)
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        Zs = (X - center) / scale
        tau = np.empty(w.size)
        k_used = {}
        for a in (0, 1):
            src = np.flatnonzero(w == a)
            opp = np.flatnonzero(w != a)
            k = min(int(K), opp.size)
            if k < K:
                warnings.warn(f"K={K} exceeds the size of the {_ARM_NAMES[1 - a]} "
                              f"({opp.size}); using K={k}")
            k_used[a] = k
            _, nb = cKDTree(Zs[opp]).query(Zs[src], k=k)
            nb = np.asarray(nb).reshape(src.size, k)
            cf = mu_fact[opp][nb].mean(axis=1)
            tau[src] = (mu_fact[src] - cf) * (2 * a - 1)
        index = cKDTree(Zs)

        def pred(Z):
            _, j = index.query((Z - center) / scale, k=1)
            return tau[np.asarray(j)]
        parts = {"rsf": m, "tau_train": tau, "mu_factual": mu_fact, "K": k_used,
                 "_predict": pred}
        return CateModel(Family.SURV_META, variant, parts, **kw)

    raise ValueError(f"variant {variant.value} is not a survival meta-learner")


# ------------------------------------------------------------------- output

def write_cate_csv(path, ids, tau_hat, tau_true, method, variant, imputer="",
                   base_learner=""):
    """Per-unit CATE rows ``id,tau_hat,tau_true,method,variant,imputer,base_learner``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,tau_hat,tau_true,method,variant,imputer,base_learner\n")
        for i, a, b in zip(ids, tau_hat, tau_true):
            fh.write(f"{int(i)},{float(a)!r},{float(b)!r},{method},{variant},"
                     f"{imputer},{base_learner}\n")
