"""Random survival forest with log-rank splitting.

Each tree is grown on a bootstrap sample; leaves hold Kaplan-Meier curves of
their in-leaf rows.  The forest prediction is the pointwise mean of the leaf
curves on the grid of distinct training event times.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _trees
from .rng import child_seed
from .survcurve import SurvivalCurve

__all__ = ["RsfModel", "fit_rsf", "predict_survival_curve", "curve_rmst"]

DEFAULT_PARAMS = {
    "n_estimators": 100,
    "min_split": 30,
    "min_leaf": 15,
    "max_depth": None,
    "seed": 0,
    "n_candidates": 32,
    "bootstrap": True,
}


@dataclass(frozen=True)
class RsfModel:
    """Fitted forest.

    ``trees`` holds one tuple per tree: node arrays ``(feature, threshold,
    left, right)`` and the CSR leaf curves ``(ptr, steps_grid, steps_surv)``.
    """

    trees: list
    params: dict
    time_grid: np.ndarray
    t_max: float
    n_features: int

    def _leaf_ids(self, X):
        out = np.empty((len(self.trees), X.shape[0]), dtype=np.int64)
        for k, (feat, thr, left, right, *_rest) in enumerate(self.trees):
            out[k] = _trees.apply_tree(feat, thr, left, right, X)
        return out

    def _flat(self):
        flat = getattr(self, "_flat_cache", None)
        if flat is None:
            ptrs, gs, ss, offs = [], [], [], []
            n_ptr = 0
            n_step = 0
            for tree in self.trees:
                ptr, g, s = tree[4], tree[5], tree[6]
                offs.append(n_ptr)
                ptrs.append(ptr + n_step)
                gs.append(g)
                ss.append(s)
                n_ptr += ptr.size
                n_step += g.size
            flat = (np.asarray(offs, dtype=np.int64), np.concatenate(ptrs),
                    np.concatenate(gs), np.concatenate(ss))
            object.__setattr__(self, "_flat_cache", flat)
        return flat

    def predict_survival(self, X, chunk=None):
        """Survival matrix ``(n, len(time_grid))``; S at ``time_grid[k]``."""
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        offs, ptr, g, s = self._flat()
        leaves = self._leaf_ids(X)
        return _trees.ensemble_survival(leaves, offs, ptr, g, s, self.time_grid.size)

    def _reduce(self, X, fn, chunk=512):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for a in range(0, X.shape[0], chunk):
            out[a:a + chunk] = fn(self.predict_survival(X[a:a + chunk]))
        return out

    def predict_rmst(self, X, h):
        """Area under each predicted curve on ``[0, h]``."""
        return self._reduce(X, lambda S: curve_rmst(self.time_grid, S, h))

    def predict_surv_prob(self, X, h):
        """Predicted S(h) for every row."""
        k = np.searchsorted(self.time_grid, h, side="right")
        if k == 0:
            return np.ones(np.atleast_2d(X).shape[0])
        return self._reduce(X, lambda S: S[:, k - 1])


def curve_rmst(grid, S, h):
    """Row-wise restricted mean of step curves ``S`` (columns on ``grid``)."""
    if not h > 0:
        raise ValueError("horizon must be positive")
    S = np.atleast_2d(S)
    knots = np.concatenate(([0.0], grid))
    vals = np.hstack((np.ones((S.shape[0], 1)), S))
    k = int(np.searchsorted(knots, h, side="right")) - 1
    widths = np.diff(knots[:k + 1])
    area = vals[:, :k] @ widths if k > 0 else np.zeros(S.shape[0])
    return area + vals[:, k] * (h - knots[k])


def fit_rsf(X, times, events, params=None, **kw):
    """Grow a random survival forest.

    Parameters
    ----------
    X : array (n, d)
    times, events : arrays (n,)
    params : dict, optional
        ``n_estimators``, ``min_split``, ``min_leaf``, ``max_depth``,
        ``seed``, ``n_candidates`` (threshold cap per feature), ``bootstrap``.

    Returns
    -------
    RsfModel
    """
    p = dict(DEFAULT_PARAMS)
    p.update(params or {})
    p.update(kw)
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(np.int64)
    n, d = X.shape
    if times.size != n or events.size != n:
        raise ValueError("X, times and events must have the same length")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(times))):
        raise ValueError("input contains non-finite values")
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    if events.sum() == 0:
        raise ValueError("no events: a survival forest needs at least one event")
    if n < p["min_split"]:
        raise ValueError(f"need at least min_split={p['min_split']} rows, got {n}")
    _, time_rank = np.unique(times, return_inverse=True)
    time_rank = time_rank.astype(np.int64)
    grid = np.unique(times[events == 1])
    grid_idx = np.where(events == 1, np.searchsorted(grid, times), -1).astype(np.int64)
    mtry = max(1, int(np.floor(np.sqrt(d))))
    depth = -1 if p["max_depth"] is None else int(p["max_depth"])
    trees = []
    for t in range(int(p["n_estimators"])):
        if p["bootstrap"]:
            sample = _trees.bootstrap_indices(n, np.uint64(child_seed(p["seed"], "rsf-boot", t)))
        else:
            sample = np.arange(n, dtype=np.int64)
        feat, thr, left, right, seg_s, seg_e, idx = _trees.build_survival_tree(
            X, time_rank, events, sample, depth, int(p["min_split"]), int(p["min_leaf"]),
            mtry, np.uint64(child_seed(p["seed"], "rsf-feat", t)), int(p["n_candidates"]))
        ptr, sg, ss = _trees.leaf_curves(feat, seg_s, seg_e, idx, time_rank, grid_idx, events)
        trees.append((feat, thr, left, right, ptr, sg, ss))
    return RsfModel(trees, p, grid, float(times.max()), d)


def predict_survival_curve(model, x):
    """Ensemble step curve for a single covariate vector."""
    S = model.predict_survival(np.asarray(x, dtype=float).reshape(1, -1))[0]
    return SurvivalCurve(model.time_grid, S, t_max=max(model.t_max, float(model.time_grid[-1])))
