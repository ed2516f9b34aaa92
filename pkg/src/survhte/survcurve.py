"""Right-continuous survival step functions and the Kaplan-Meier estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SurvivalCurve",
    "fit_km",
    "eval_curve",
    "rmst",
    "conditional_residual_mean",
    "km_table",
]


@dataclass(frozen=True)
class SurvivalCurve:
    """S(t) = probs[k] for grid[k] <= t < grid[k+1]; S(t) = 1 before grid[0].

    ``t_max`` is the end of follow-up (the last observed time of the data
    the curve came from).  Beyond the last grid point the curve plateaus;
    :func:`conditional_residual_mean` only integrates up to ``t_max``.
    """

    grid: np.ndarray
    probs: np.ndarray
    t_max: float | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if grid.shape != probs.shape or grid.ndim != 1:
            raise ValueError("grid and probs must be 1-d arrays of equal length")
        if grid.size and (grid[0] < 0 or np.any(np.diff(grid) <= 0)):
            raise ValueError("grid must be non-negative and strictly increasing")
        if np.any(probs < -1e-12) or np.any(probs > 1 + 1e-12):
            raise ValueError("survival probabilities must lie in [0, 1]")
        if np.any(np.diff(probs) > 1e-12):
            raise ValueError("survival probabilities must be non-increasing")
        t_max = self.t_max
        if t_max is None:
            t_max = float(grid[-1]) if grid.size else 0.0
        elif grid.size and t_max < grid[-1]:
            raise ValueError("t_max precedes the last grid point")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "probs", np.clip(probs, 0.0, 1.0))
        object.__setattr__(self, "t_max", float(t_max))

    def __call__(self, t):
        return eval_curve(self, t)


def km_table(times, events, weights=None):
    """Distinct observed times with their at-risk and event counts.

    Returns ``(t, n_at_risk, n_events, n_removed)`` where ``n_removed``
    counts every observation (event or censored) at that time.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    if times.shape != events.shape:
        raise ValueError("times and events must have the same length")
    if times.size == 0:
        raise ValueError("cannot fit a survival curve to empty data")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise ValueError("times must be finite and non-negative")
    wts = np.ones(times.size) if weights is None else np.asarray(weights, dtype=float)
    t, inv = np.unique(times, return_inverse=True)
    removed = np.bincount(inv, weights=wts, minlength=t.size)
    died = np.bincount(inv, weights=wts * events, minlength=t.size)
    at_risk = np.cumsum(removed[::-1])[::-1]
    return t, at_risk, died, removed


def fit_km(times, events, weights=None):
    """Product-limit estimate over the distinct event times."""
    t, n, d, _ = km_table(times, events, weights)
    has_event = d > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        factors = 1.0 - d[has_event] / n[has_event]
    probs = np.cumprod(factors)
    return SurvivalCurve(t[has_event], probs, t_max=float(t[-1]))


def eval_curve(curve, t):
    """Evaluate the step function at ``t`` (scalar or array)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("survival curves are only defined for t >= 0")
    pos = np.searchsorted(curve.grid, t_arr, side="right")
    padded = np.concatenate(([1.0], curve.probs))
    out = padded[pos]
    return float(out) if np.ndim(t) == 0 else out


def _area(curve, a, b):
    """Exact integral of the curve over [a, b] (vectorized over ``a``)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    knots = np.concatenate(([0.0], curve.grid))
    vals = np.concatenate(([1.0], curve.probs))
    # cumulative area from 0 up to each knot
    seg = vals[:-1] * np.diff(knots)
    cum = np.concatenate(([0.0], np.cumsum(seg)))

    def area_to(t):
        k = np.searchsorted(knots, t, side="right") - 1
        # a zero tail contributes nothing, even out to t = inf
        with np.errstate(invalid="ignore"):
            tail = np.where(vals[k] > 0, vals[k] * (t - knots[k]), 0.0)
        return cum[k] + tail

    b_arr = np.full_like(a, float(b))
    return np.where(b_arr > a, area_to(b_arr) - area_to(np.minimum(a, b_arr)), 0.0)


def rmst(curve, h):
    """Restricted mean survival time: area under the curve on [0, h]."""
    if not h > 0:
        raise ValueError("horizon must be positive")
    return float(_area(curve, 0.0, h)[0])


def conditional_residual_mean(curve, t0):
    """t0 + (area of S on [t0, t_max]) / S(t0).

    Falls back to ``t0`` where S(t0) = 0 or t0 >= t_max.
    """
    t0_arr = np.atleast_1d(np.asarray(t0, dtype=float))
    if np.any(t0_arr < 0):
        raise ValueError("t0 must be non-negative")
    s = np.atleast_1d(eval_curve(curve, t0_arr))
    area = _area(curve, t0_arr, curve.t_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s > 0, t0_arr + area / s, t0_arr)
    return float(out[0]) if np.ndim(t0) == 0 else out
