"""Surrogate event times for right-censored data.

Three imputers turn ``(time, event)`` pairs into fully observed regression
targets:

* ``margin``   -- Kaplan-Meier conditional mean residual life beyond the
  censoring time;
* ``ipcw_t``   -- average of the later observed event times;
* ``pseudo``   -- jackknife pseudo-observations of the Kaplan-Meier mean.

Censored surrogates are never allowed below the censoring time (the floor
rule); ``ImputedOutcome.floored`` records where the floor was applied.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .survcurve import conditional_residual_mean, fit_km, km_table

__all__ = [
    "ImputeMethod",
    "ImputedOutcome",
    "SurvivalImputer",
    "impute_margin",
    "impute_ipcw_t",
    "impute_pseudo_obs",
    "km_mean",
    "loo_km_means",
    "pseudo_values",
    "write_imputed_csv",
]


class ImputeMethod(str, enum.Enum):
    MARGIN = "margin"
    IPCW_T = "ipcw_t"
    PSEUDO_OBS = "pseudo_obs"


@dataclass(frozen=True)
class ImputedOutcome:
    unit_id: np.ndarray
    surrogate: np.ndarray
    method: ImputeMethod
    floored: np.ndarray

    def __len__(self):
        return len(self.surrogate)


class _KMSums:
    """Kaplan-Meier pieces shared by the mean and its jackknife.

    With distinct observed times tau_1 < ... < tau_K and knots tau_0 = 0,
    the KM mean up to tau_K is sum_k P_k * gap_k, where P_k is the survival
    after tau_k and gap_k = tau_{k+1} - tau_k (gap_K = 0).
    """

    def __init__(self, times, events):
        self.tau, self.n, self.d, self.r = km_table(times, events)
        K = self.tau.size
        self.N = float(self.r.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            self.f = np.where(self.n > 0, 1.0 - self.d / self.n, 1.0)
        knots = np.concatenate(([0.0], self.tau))
        # gap[k] for k = 0..K, where index 0 is the stretch [0, tau_1)
        self.gap = np.concatenate((np.diff(knots), [0.0]))
        # Q[k] = sum_{j>=k} (prod_{k<l<=j} f_l) gap_j, for grid index k = 1..K
        Q = np.zeros(K + 2)
        for k in range(K, 0, -1):
            nxt = self.f[k] * Q[k + 1] if k < K else 0.0
            Q[k] = self.gap[k] + nxt
        self.Q = Q
        P = np.concatenate(([1.0], np.cumprod(self.f)))
        self.mean = float(np.dot(P, self.gap))

    def _shifted(self, shift):
        """Prefix products/sums of survival with every risk set shifted."""
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = self.n + shift
            f = np.where(denom > 0, 1.0 - self.d / denom, 1.0)
        A = np.concatenate(([1.0], np.cumprod(np.clip(f, 0.0, 1.0))))
        C = np.cumsum(A * self.gap)
        return A, C

    def leave_one_out(self, m_idx, delta):
        """KM means with one observation at grid index ``m_idx`` (1-based) removed."""
        K = self.tau.size
        A, C = self._shifted(-1.0)
        m = m_idx
        n_m = self.n[m - 1] - 1.0
        d_m = self.d[m - 1] - delta
        with np.errstate(divide="ignore", invalid="ignore"):
            f_m = np.where(n_m > 0, 1.0 - d_m / n_m, 1.0)
        out = C[m - 1] + A[m - 1] * f_m * self.Q[m]
        # removing the only observation at the last time shortens follow-up
        last_alone = (m == K) & (self.r[K - 1] == 1)
        if np.any(last_alone):
            trimmed = C[K - 2] if K >= 2 else 0.0
            out = np.where(last_alone, trimmed, out)
        return out

    def add_one(self, t, delta):
        """KM means of the data augmented by one observation ``(t, delta)``."""
        K = self.tau.size
        A, C = self._shifted(1.0)
        t = np.asarray(t, dtype=float)
        delta = np.asarray(delta, dtype=float)
        pos = np.searchsorted(self.tau, t, side="left")  # 0-based
        exists = (pos < K) & (self.tau[np.minimum(pos, K - 1)] == t)
        out = np.empty(t.shape)

        # t coincides with an existing grid time tau_m (m = pos + 1)
        m = pos + 1
        e = exists
        if np.any(e):
            mm = m[e]
            n_m = self.n[mm - 1] + 1.0
            d_m = self.d[mm - 1] + delta[e]
            f_m = 1.0 - d_m / n_m
            out[e] = C[mm - 1] + A[mm - 1] * f_m * self.Q[mm]

        # t is a new point strictly between tau_{m-1} and tau_m (tau_0 = 0)
        ne = ~exists & (pos < K)
        if np.any(ne):
            mm = m[ne]  # first grid index after t
            tt = t[ne]
            left = np.where(mm >= 2, self.tau[np.maximum(mm - 2, 0)], 0.0)
            n_t = self.n[mm - 1] + 1.0
            f_t = 1.0 - delta[ne] / n_t
            before = _prefix_before(C, mm)
            a_prev = A[mm - 1]
            head = a_prev * (tt - left) + a_prev * f_t * (self.tau[mm - 1] - tt)
            out[ne] = before + head + a_prev * f_t * self.f[mm - 1] * self.Q[mm]

        # t beyond the last observed time: follow-up extends to t
        beyond = pos >= K
        if np.any(beyond):
            out[beyond] = C[K] + A[K] * (t[beyond] - self.tau[K - 1])
        return out


def _prefix_before(C, mm):
    # sum_{k < m-1} A_k gap_k, i.e. everything before the stretch that holds t
    idx = mm - 2
    return np.where(idx >= 0, C[np.maximum(idx, 0)], 0.0)


def km_mean(times, events):
    """Area under the Kaplan-Meier curve up to the last observed time."""
    return _KMSums(times, events).mean


def loo_km_means(times, events):
    """Leave-one-out KM means for every observation, in O(n log n)."""
    times = np.asarray(times, dtype=float)
    sums = _KMSums(times, events)
    m = np.searchsorted(sums.tau, times, side="left") + 1
    return sums.leave_one_out(m, np.asarray(events, dtype=float))


def pseudo_values(times, events):
    """Jackknife pseudo-values N*theta - (N-1)*theta_(-i) of the KM mean."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise ValueError("pseudo-observations need at least two units")
    sums = _KMSums(times, events)
    return sums.N * sums.mean - (sums.N - 1.0) * loo_km_means(times, events)


def _floor(raw, times, events, floor_all=False):
    target = np.ones_like(events, dtype=bool) if floor_all else ~events.astype(bool)
    floored = target & (raw < times)
    return np.where(floored, times, raw), floored


class SurvivalImputer:
    """Fit an imputer on training data and apply it to any split.

    Parameters
    ----------
    method : ImputeMethod or str
    per_arm : bool
        Fit a separate reference distribution per treatment arm (requires
        ``w`` in ``fit`` and ``transform``).
    replace_uncensored : bool
        Pseudo-observations only: also substitute the jackknife value for
        units whose event was observed (by default they keep their time).
    floor_all : bool
        With ``replace_uncensored``, apply the floor rule to uncensored
        pseudo-observations as well.
    """

    def __init__(self, method, per_arm=False, replace_uncensored=False,
                 floor_all=False):
        self.method = ImputeMethod(method)
        self.per_arm = per_arm
        self.replace_uncensored = replace_uncensored
        self.floor_all = floor_all
        self.n_fit_rows_ = 0

    def fit(self, times, events, w=None):
        times = np.asarray(times, dtype=float)
        events = np.asarray(events).astype(bool)
        if times.size == 0:
            raise ValueError("cannot fit an imputer on empty data")
        if self.method is ImputeMethod.PSEUDO_OBS and times.size < 2:
            raise ValueError("pseudo-observations need at least two units")
        self.n_fit_rows_ = times.size
        if self.per_arm:
            if w is None:
                raise ValueError("per-arm imputation needs the treatment vector")
            w = np.asarray(w)
            self._refs = {a: self._fit_one(times[w == a], events[w == a]) for a in (0, 1)}
        else:
            self._refs = {None: self._fit_one(times, events)}
        self._train = (times, events, None if w is None else np.asarray(w))
        return self

    def _fit_one(self, times, events):
        if self.method is ImputeMethod.MARGIN:
            return fit_km(times, events)
        if self.method is ImputeMethod.IPCW_T:
            ev_t = np.sort(times[events])
            tail = np.concatenate((np.cumsum(ev_t[::-1])[::-1], [0.0]))
            return ev_t, tail
        return _KMSums(times, events)

    def _raw(self, ref, times, events, in_sample):
        if self.method is ImputeMethod.MARGIN:
            raw = np.where(events, times, conditional_residual_mean(ref, times))
        elif self.method is ImputeMethod.IPCW_T:
            ev_t, tail = ref
            start = np.searchsorted(ev_t, times, side="right")
            count = ev_t.size - start
            with np.errstate(divide="ignore", invalid="ignore"):
                later = np.where(count > 0, tail[start] / count, times)
            raw = np.where(events, times, later)
        else:
            N = ref.N
            if in_sample:
                m = np.searchsorted(ref.tau, times, side="left") + 1
                raw = N * ref.mean - (N - 1.0) * ref.leave_one_out(m, events.astype(float))
            else:
                raw = (N + 1.0) * ref.add_one(times, events.astype(float)) - N * ref.mean
            if not self.replace_uncensored:
                raw = np.where(events, times, raw)
        return np.atleast_1d(np.asarray(raw, dtype=float))

    def transform(self, times, events, w=None, unit_id=None, in_sample=False):
        """Surrogates for ``(times, events)``.

        ``in_sample=True`` means the rows are exactly the training rows, which
        matters only for pseudo-observations (leave-one-out versus add-one).
        """
        times = np.asarray(times, dtype=float)
        events = np.asarray(events).astype(bool)
        raw = np.empty(times.size)
        if self.per_arm:
            if w is None:
                raise ValueError("per-arm imputation needs the treatment vector")
            w = np.asarray(w)
            for a, ref in self._refs.items():
                sel = w == a
                if np.any(sel):
                    raw[sel] = self._raw(ref, times[sel], events[sel], in_sample)
        else:
            raw = self._raw(self._refs[None], times, events, in_sample)
        floor_all = self.floor_all and self.method is ImputeMethod.PSEUDO_OBS
        surrogate, floored = _floor(raw, times, events, floor_all)
        if unit_id is None:
            unit_id = np.arange(times.size)
        return ImputedOutcome(np.asarray(unit_id), surrogate, self.method, floored)

    def fit_transform(self, times, events, w=None, unit_id=None):
        return self.fit(times, events, w).transform(
            times, events, w, unit_id=unit_id, in_sample=True)


def impute_margin(times, events, **kw):
    return SurvivalImputer(ImputeMethod.MARGIN, **kw).fit_transform(times, events)


def impute_ipcw_t(times, events, **kw):
    return SurvivalImputer(ImputeMethod.IPCW_T, **kw).fit_transform(times, events)


def impute_pseudo_obs(times, events, **kw):
    return SurvivalImputer(ImputeMethod.PSEUDO_OBS, **kw).fit_transform(times, events)


def write_imputed_csv(outcome, path):
    """Write ``id,method,surrogate,floored`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,method,surrogate,floored\n")
        for uid, s, fl in zip(outcome.unit_id, outcome.surrogate, outcome.floored):
            fh.write(f"{int(uid)},{outcome.method.value},{float(s)!r},{int(fl)}\n")
