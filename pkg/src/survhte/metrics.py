"""Evaluation metrics and cross-dataset rank aggregation."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .survcurve import eval_curve

__all__ = [
    "UndefinedMetricError",
    "MetricRecord",
    "RankTable",
    "cate_rmse",
    "ate_bias",
    "imputation_mae",
    "ctd_index",
    "auc",
    "borda_rank",
    "win_rates",
]


class UndefinedMetricError(ValueError):
    """The metric has no defined value on the given input."""


def _pair(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def cate_rmse(tau_hat, tau_true):
    a, b = _pair(tau_hat, tau_true)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def ate_bias(tau_hat, delta_true):
    a = np.asarray(tau_hat, dtype=float)
    if a.size == 0:
        raise ValueError("empty input")
    return float(a.mean() - delta_true)


def imputation_mae(surrogates, true_event_times):
    a, b = _pair(surrogates, true_event_times)
    return float(np.mean(np.abs(a - b)))


def _surv_at_own_times(curves, times):
    """Matrix M[i, j] = S_j(t_i) from a list of curves or a (grid, S) pair."""
    if isinstance(curves, tuple):
        grid, S = curves
        S = np.atleast_2d(np.asarray(S, dtype=float))
        pos = np.searchsorted(np.asarray(grid, dtype=float), times, side="right")
        padded = np.hstack((np.ones((S.shape[0], 1)), S))
        return padded[:, pos].T
    return np.column_stack([eval_curve(c, times) for c in curves])


def ctd_index(curves, times, events):
    """Time-dependent concordance (Antolini).

    Pairs (i, j) are comparable when unit i had an event and t_i < t_j; the
    pair is concordant when S_i(t_i) < S_j(t_i) and ties count one half.

    ``curves`` is either a sequence of :class:`SurvivalCurve` (one per unit)
    or a tuple ``(grid, S)`` with ``S[j]`` the step values of unit j on
    ``grid``.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events).astype(bool)
    n = times.size
    if isinstance(curves, tuple):
        if np.atleast_2d(curves[1]).shape[0] != n:
            raise ValueError("one curve per unit is required")
    elif len(curves) != n:
        raise ValueError("one curve per unit is required")
    ev = np.flatnonzero(events)
    conc = 0.0
    total = 0
    for a in range(0, ev.size, 256):
        rows = ev[a:a + 256]
        M = _surv_at_own_times(curves, times[rows])  # (len(rows), n)
        own = M[np.arange(rows.size), rows][:, None]
        comp = times[None, :] > times[rows][:, None]
        conc += np.sum(comp & (own < M)) + 0.5 * np.sum(comp & (own == M))
        total += int(comp.sum())
    if total == 0:
        raise UndefinedMetricError("no comparable pairs for the concordance index")
    return float(conc / total)


def auc(scores, labels):
    """Area under the ROC curve via the Mann-Whitney statistic (mid-ranks)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.size != y.size:
        raise ValueError("length mismatch")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC needs both classes")
    r = rankdata(s)
    return float((r[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


# --------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class MetricRecord:
    dataset_key: tuple
    method_key: tuple
    cate_rmse: float
    ate_bias: float
    aux: dict = field(default_factory=dict)
    error: str = ""

    @property
    def failed(self):
        return bool(self.error) or not np.isfinite(self.cate_rmse)


def _method_label(key):
    return "/".join(str(k) for k in key if k not in ("", None))


@dataclass
class RankTable:
    methods: list
    datasets: list
    ranks: np.ndarray  # (n_datasets, n_methods), NaN where missing
    borda: np.ndarray
    borda_se: np.ndarray
    winrate_topk: dict

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["method", "mean_rank", "rank_stderr", "n_datasets"])
        counts = np.sum(np.isfinite(self.ranks), axis=0)
        for m, b, se, c in zip(self.methods, self.borda, self.borda_se, counts):
            wr.writerow([m, f"{b:.6f}", f"{se:.6f}", int(c)])
        return buf.getvalue()

    def winrates_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        ks = sorted(self.winrate_topk)
        wr.writerow(["method"] + [f"top{k}" for k in ks])
        for i, m in enumerate(self.methods):
            wr.writerow([m] + [f"{self.winrate_topk[k][i]:.6f}" for k in ks])
        return buf.getvalue()

    def to_markdown(self):
        lines = ["| method | mean rank | rank stderr |", "|---|---|---|"]
        for i in np.argsort(self.borda, kind="stable"):
            lines.append(f"| {self.methods[i]} | {self.borda[i]:.3f} | {self.borda_se[i]:.3f} |")
        lines.append("")
        lines.append("Ranks are tie-averaged within each dataset (1 = best); "
                     "Top-k counts every method whose rank is <= k.")
        return "\n".join(lines) + "\n"


def _grid(records, metric, allow_missing):
    datasets = []
    methods = []
    cells = {}
    for r in records:
        if r.dataset_key not in cells:
            datasets.append(r.dataset_key)
            cells[r.dataset_key] = {}
        if r.method_key not in methods:
            methods.append(r.method_key)
        if r.method_key in cells[r.dataset_key]:
            raise ValueError(f"duplicate record for {r.dataset_key} / {r.method_key}")
        val = getattr(r, metric) if hasattr(r, metric) else r.aux.get(metric, np.nan)
        if metric == "ate_bias":
            val = abs(val)
        cells[r.dataset_key][r.method_key] = np.nan if r.failed else float(val)
    V = np.full((len(datasets), len(methods)), np.nan)
    for i, dk in enumerate(datasets):
        for j, mk in enumerate(methods):
            V[i, j] = cells[dk].get(mk, np.nan)
    missing = [(datasets[i], methods[j]) for i, j in zip(*np.nonzero(~np.isfinite(V)))]
    if missing:
        if not allow_missing:
            listing = "; ".join(f"{d} x {_method_label(m)}" for d, m in missing[:20])
            more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
            raise ValueError(f"missing cells: {listing}{more}")
        warnings.warn(f"{len(missing)} missing cells ranked over present cells only")
    return datasets, methods, V


def _rank_rows(V):
    R = np.full(V.shape, np.nan)
    for i in range(V.shape[0]):
        ok = np.isfinite(V[i])
        if ok.any():
            R[i, ok] = rankdata(V[i, ok], method="average")
    return R


def borda_rank(records, metric="cate_rmse", ks=(1, 3, 5), allow_missing=False):
    """Per-dataset ranks (ascending metric, tie-averaged) and their mean.

    ``ate_bias`` is ranked by absolute value.
    """
    datasets, methods, V = _grid(list(records), metric, allow_missing)
    R = _rank_rows(V)
    cnt = np.sum(np.isfinite(R), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        borda = np.nanmean(R, axis=0) if R.size else np.zeros(len(methods))
        sd = np.nanstd(R, axis=0, ddof=1) if R.shape[0] > 1 else np.zeros(len(methods))
        se = np.where(cnt > 1, sd / np.sqrt(np.maximum(cnt, 1)), 0.0)
    wins = {int(k): _topk(R, k) for k in ks}
    return RankTable([_method_label(m) for m in methods], datasets, R,
                     np.asarray(borda, dtype=float), np.nan_to_num(se), wins)


def _topk(R, k):
    hit = np.where(np.isfinite(R), R <= k, False)
    cnt = np.sum(np.isfinite(R), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, hit.sum(axis=0) / np.maximum(cnt, 1), 0.0)


def win_rates(records, ks, metric="cate_rmse", allow_missing=False):
    """Fraction of datasets where each method ranks <= k (ties included)."""
    datasets, methods, V = _grid(list(records), metric, allow_missing)
    R = _rank_rows(V)
    return {int(k): dict(zip([_method_label(m) for m in methods], _topk(R, k)))
            for k in ks}
