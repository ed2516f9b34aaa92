"""Experiment harness: dataset export, split/repeat protocol, model
selection on validation data, convergence sweeps and report files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import jsonschema
import numpy as np

from . import __version__
from .baselearn import fit_logistic
from .cate import (Family, fit_double_ml, fit_imputed_meta,
                   fit_survival_meta)
from .datagen import (CausalConfig, DatasetSpec, Estimand, Scenario, SyntheticDataset,
                      build_dataset, population_ate)
from .impute import SurvivalImputer
from .metrics import (MetricRecord, RankTable, auc, borda_rank, cate_rmse, ate_bias,
                      ctd_index, imputation_mae)
from .rng import child_seed, generator

__all__ = [
    "CSV_COLUMNS",
    "CONFIG_SCHEMA",
    "MethodSpec",
    "ExperimentConfig",
    "BenchReport",
    "export_dataset",
    "import_dataset",
    "select_model",
    "run_benchmark",
    "convergence_run",
    "render_report",
    "rank_metrics_file",
    "resolve_threads",
    "FIT_HOOKS",
]

CSV_COLUMNS = ("id", "x1", "x2", "x3", "x4", "x5", "u1", "u2", "w", "obs_time",
               "event", "t0", "t1", "cate_true")

# callables (stage, n_rows) invoked whenever the harness fits on data;
# tests use them to check that only training rows reach imputers/nuisances
FIT_HOOKS = []


def _hook(stage, n_rows):
    for fn in FIT_HOOKS:
        fn(stage, int(n_rows))


# ------------------------------------------------------------- file helpers

def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g17(v):
    return format(float(v), ".17g")


def export_dataset(spec, path, dataset=None):
    """Write the dataset for ``spec`` as CSV plus a ``.json`` metadata sidecar."""
    if not isinstance(spec, DatasetSpec):
        raise TypeError("spec must be a DatasetSpec")
    ds = build_dataset(spec) if dataset is None else dataset
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for i in range(len(ds)):
        row = [str(int(ds.ids[i]))]
        row += [_g17(v) for v in ds.x[i]] + [_g17(v) for v in ds.u[i]]
        row += [str(int(ds.w[i])), _g17(ds.obs_time[i]), str(int(ds.event[i])),
                _g17(ds.t0[i]), _g17(ds.t1[i]), _g17(ds.cate_true[i])]
        buf.write(",".join(row) + "\n")
    meta = {"scenario": ds.scenario.value, "config": ds.config.name, "seed": int(ds.seed),
            "n": len(ds), "estimand": ds.estimand.value, "horizon": _json_float(ds.horizon),
            "toolkit_version": __version__}
    try:
        _atomic_write(path, buf.getvalue())
        _atomic_write(_sidecar(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path!r}: {exc}") from exc
    return path


def _sidecar(path):
    root, _ = os.path.splitext(path)
    return root + ".json"


def _json_float(v):
    v = float(v)
    return "inf" if math.isinf(v) else v


def import_dataset(path):
    """Read a dataset written by :func:`export_dataset`."""
    try:
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        with open(_sidecar(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read dataset {path!r}: {exc}") from exc
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    a = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(CSV_COLUMNS))
    col = {c: a[:, i] for i, c in enumerate(CSV_COLUMNS)}
    return SyntheticDataset(
        x=a[:, 1:6].copy(), u=a[:, 6:8].copy(), w=col["w"].astype(np.int8),
        obs_time=col["obs_time"].copy(), event=col["event"].astype(np.int8),
        t0=col["t0"].copy(), t1=col["t1"].copy(), cate_true=col["cate_true"].copy(),
        scenario=Scenario(meta["scenario"]), config=CausalConfig.from_name(meta["config"]),
        seed=int(meta["seed"]), horizon=float(meta["horizon"]),
        estimand=Estimand(meta["estimand"]), ids=col["id"].astype(np.int64))


# ------------------------------------------------------------------- config

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "survhte experiment configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenarios", "configs", "roster"],
    "properties": {
        "scenarios": {"type": "array", "minItems": 1,
                      "items": {"enum": [s.value for s in Scenario]}},
        "configs": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "n_train": {"type": "integer", "minimum": 1},
        "n_val": {"type": "integer", "minimum": 1},
        "n_test": {"type": "integer", "minimum": 1},
        "pool_size": {"type": "integer", "minimum": 3},
        "repeats": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "estimand": {"enum": ["RMST", "SURV_PROB"]},
        "horizon": {"oneOf": [{"enum": ["max_observed", "inf"]},
                              {"type": "number", "exclusiveMinimum": 0}]},
        "matching_k": {"type": "integer", "minimum": 1},
        "regenerate_pool": {"type": "boolean"},
        "tune": {"type": "boolean"},
        "out_dir": {"type": "string"},
        "roster": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["family"],
                "properties": {
                    "family": {"enum": [f.value for f in Family]},
                    "variant": {"$ref": "#/definitions/strs"},
                    "imputer": {"$ref": "#/definitions/strs"},
                    "base_learner": {"$ref": "#/definitions/strs"},
                    "n_estimators": {"oneOf": [
                        {"type": "integer", "minimum": 1},
                        {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                },
            },
        },
    },
    "definitions": {
        "strs": {"oneOf": [{"type": "string"},
                           {"type": "array", "items": {"type": "string"}}]},
    },
}


@dataclass(frozen=True)
class MethodSpec:
    """One roster cell."""

    family: Family
    variant: str
    imputer: str = ""
    base_learner: str = ""
    n_estimators: int = 100

    @property
    def group(self):
        """Family-level method name (selection happens within a group)."""
        if self.family is Family.DOUBLE_ML:
            return "Double-ML"
        if self.family is Family.SURV_META:
            if self.variant == "MATCHING":
                return "Survival Matching-Learner"
            return f"Survival {self.variant}-Learner"
        return f"{self.variant}-Learner"

    @property
    def key(self):
        extra = f"n{self.n_estimators}" if self.family is Family.SURV_META else ""
        return (self.group, self.imputer or "-", self.base_learner or extra or "-")


def _as_list(v, default):
    if v is None:
        return list(default)
    return list(v) if isinstance(v, (list, tuple)) else [v]


def expand_roster(entries):
    """Expand list-valued roster fields into the full product of cells."""
    cells = []
    for e in entries:
        fam = Family(e["family"])
        if fam is Family.DOUBLE_ML:
            variants = ["DML"]
        else:
            variants = _as_list(e.get("variant"), ["S"])
        imps = _as_list(e.get("imputer"), ["margin"]) if fam is not Family.SURV_META else [""]
        bls = _as_list(e.get("base_learner"), ["lasso"]) if fam is not Family.SURV_META else [""]
        trees = _as_list(e.get("n_estimators"), [100]) if fam is Family.SURV_META else [100]
        for v, i, b, t in itertools.product(variants, imps, bls, trees):
            if fam is Family.IMPUTED_META and v not in ("S", "T", "X", "DR"):
                raise ValueError(f"imputed meta-learners have no {v!r} variant")
            if fam is Family.SURV_META and v not in ("S", "T", "MATCHING"):
                raise ValueError(f"survival meta-learners have no {v!r} variant")
            cell = MethodSpec(fam, v, i, b, int(t))
            if cell not in cells:
                cells.append(cell)
    return cells


@dataclass
class ExperimentConfig:
    scenarios: list
    configs: list
    roster: list
    n_train: int = 5000
    n_val: int = 2500
    n_test: int = 2500
    pool_size: int = 50_000
    repeats: int = 10
    seed: int = 0
    estimand: str = "RMST"
    horizon: object = "max_observed"
    matching_k: int = 5
    regenerate_pool: bool = False
    tune: bool = True
    out_dir: str = "bench_out"

    def __post_init__(self):
        if self.n_train + self.n_val + self.n_test > self.pool_size:
            raise ValueError("n_train + n_val + n_test exceeds the pool size")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.scenarios = [Scenario(s) for s in self.scenarios]
        self.configs = [c if isinstance(c, CausalConfig) else CausalConfig.from_name(c)
                        for c in self.configs]
        Estimand(self.estimand)

    @classmethod
    def from_dict(cls, d):
        jsonschema.validate(d, CONFIG_SCHEMA)
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        d["scenarios"] = [s.value for s in self.scenarios]
        d["configs"] = [c.name for c in self.configs]
        return d

    def cells(self):
        return expand_roster(self.roster)

    def hash(self):
        d = self.to_dict()
        d.pop("out_dir", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ------------------------------------------------------------------ running

@dataclass
class CellResult:
    scenario: str
    config: str
    repeat: int
    spec: MethodSpec
    val_rmse: float = math.nan
    cate_rmse: float = math.nan
    ate_bias: float = math.nan
    impute_mae: float = math.nan
    ctd: float = math.nan
    auc: float = math.nan
    selected: bool = False
    error: str = ""
    n_train: int = 0
    size_index: int = -1


@dataclass
class BenchReport:
    config: ExperimentConfig
    cells: list = field(default_factory=list)
    convergence: bool = False

    def family_records(self):
        """Selected (family-level) cells as :class:`MetricRecord` objects."""
        out = []
        for c in self.cells:
            if c.selected or (c.error and not _group_has_selection(self.cells, c)):
                out.append(MetricRecord(
                    (c.scenario, c.config, c.repeat), (c.spec.group,), c.cate_rmse,
                    c.ate_bias, {"impute_mae": c.impute_mae, "ctd": c.ctd, "auc": c.auc},
                    c.error if not c.selected else ""))
        return _dedupe(out)

    def dataset_records(self):
        """Family-level records averaged over repeats, keyed by dataset."""
        groups = {}
        for r in self.family_records():
            k = (r.dataset_key[:2], r.method_key)
            groups.setdefault(k, []).append(r)
        out = []
        for (dk, mk), rs in groups.items():
            vals = [r.cate_rmse for r in rs]
            bad = any(r.failed for r in rs)
            out.append(MetricRecord(dk, mk, math.nan if bad else float(np.mean(vals)),
                                    math.nan if bad else float(np.mean([r.ate_bias for r in rs])),
                                    error="failed" if bad else ""))
        return out


def _group_has_selection(cells, c):
    return any(o.selected and o.spec.group == c.spec.group and o.scenario == c.scenario
               and o.config == c.config and o.repeat == c.repeat
               and o.size_index == c.size_index for o in cells)


def _dedupe(records):
    seen = set()
    out = []
    for r in records:
        k = (r.dataset_key, r.method_key)
        if k not in seen:
            seen.add(k)
            out.append(r)
    return out


def select_model(candidates, X_val, tau_val):
    """Index and model with the smallest validation CATE RMSE.

    Ties go to the earliest candidate.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    best, best_i = math.inf, 0
    for i, m in enumerate(candidates):
        score = cate_rmse(m.predict(X_val), tau_val)
        if score < best:
            best, best_i = score, i
    return best_i, candidates[best_i]


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("SURVHTE_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


class _Pools:
    """Per-(scenario, config) pools and reference ATEs, computed lazily."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._pools = {}
        self._delta = {}

    def pool(self, scenario, config, repeat):
        key = (scenario, config.name, repeat if self.cfg.regenerate_pool else None)
        if key not in self._pools:
            labels = ("pool", scenario.value, config.name)
            if self.cfg.regenerate_pool:
                labels += (repeat,)
            h = self.cfg.horizon
            horizon = None if h == "max_observed" else (math.inf if h == "inf" else float(h))
            spec = DatasetSpec(scenario, config, self.cfg.pool_size,
                               child_seed(self.cfg.seed, *labels), self.cfg.estimand, horizon)
            self._pools[key] = build_dataset(spec)
        return self._pools[key]

    def delta(self, ds):
        key = (ds.scenario, ds.config.name, ds.estimand, ds.horizon)
        if key not in self._delta:
            self._delta[key] = population_ate(ds.scenario, ds.config, ds.estimand,
                                              ds.horizon, n=50_000)
        return self._delta[key]


def _split(cfg, scenario, config, repeat, n_pool):
    perm = generator(cfg.seed, "split", scenario.value, config.name, repeat).permutation(n_pool)
    a, b = cfg.n_train, cfg.n_train + cfg.n_val
    return perm[:a], perm[a:b], perm[b:b + cfg.n_test]


def _fit_cell(spec, cfg, tr, imputed, seed):
    X, w = tr.x, tr.w
    if spec.family is Family.SURV_META:
        _hook("survival", len(tr))
        return fit_survival_meta(spec.variant, X, w, tr.obs_time, tr.event,
                                 {"n_estimators": spec.n_estimators}, tr.estimand,
                                 tr.horizon, K=cfg.matching_k, seed=seed)
    y = imputed[spec.imputer][0]
    _hook("estimator", len(y))
    if spec.family is Family.DOUBLE_ML:
        return fit_double_ml(X, w, y, spec.base_learner, seed=seed, tune=cfg.tune)
    return fit_imputed_meta(spec.variant, X, w, y, spec.base_learner, seed=seed,
                            tune=cfg.tune)


def _aux_metrics(res, spec, model, tr, te, imputed):
    if spec.family is not Family.SURV_META:
        res.impute_mae = imputed[spec.imputer][1]
    if spec.variant in ("X", "DR") or spec.family is Family.DOUBLE_ML:
        g = fit_logistic(tr.x, tr.w)
        if np.unique(te.w).size == 2:
            res.auc = auc(g.predict(te.x), te.w)
    if spec.family is Family.SURV_META and spec.variant in ("S", "T", "MATCHING"):
        parts = model.parts
        if "rsf" in parts:
            rsf = parts["rsf"]
            S = rsf.predict_survival(np.column_stack((te.x, te.w)))
            grid = rsf.time_grid
        else:
            grid = np.union1d(parts["rsf0"].time_grid, parts["rsf1"].time_grid)
            S = np.empty((len(te), grid.size))
            for a in (0, 1):
                sel = te.w == a
                m = parts[f"rsf{a}"]
                Sa = m.predict_survival(te.x[sel])
                pos = np.searchsorted(m.time_grid, grid, side="right")
                S[sel] = np.hstack((np.ones((Sa.shape[0], 1)), Sa))[:, pos]
        try:
            res.ctd = ctd_index((grid, S), te.obs_time, te.event)
        except ValueError:
            pass


def _run_dataset(cfg, pools, scenario, config, repeat, cells, train_idx=None,
                 size_index=-1):
    pool = pools.pool(scenario, config, repeat)
    tri, vai, tei = _split(cfg, scenario, config, repeat, len(pool))
    if train_idx is not None:
        tri = train_idx
    tr, va, te = pool.subset(tri), pool.subset(vai), pool.subset(tei)
    delta = pools.delta(pool)
    imputed = {}
    results = []
    for imp in sorted({c.imputer for c in cells if c.imputer}):
        try:
            m = SurvivalImputer(imp)
            _hook("imputer", len(tr))
            m.fit(tr.obs_time, tr.event)
            y_tr = m.transform(tr.obs_time, tr.event, in_sample=True).surrogate
            y_te = m.transform(te.obs_time, te.event).surrogate
            imputed[imp] = (y_tr, imputation_mae(y_te, te.t_factual))
        except Exception as exc:  # recorded per cell below
            imputed[imp] = exc
    for spec in cells:
        res = CellResult(scenario.value, config.name, repeat, spec, n_train=len(tr),
                         size_index=size_index)
        seed = child_seed(cfg.seed, "cell", scenario.value, config.name, repeat,
                          spec.family.value, spec.variant, spec.imputer, spec.base_learner,
                          spec.n_estimators, size_index)
        try:
            if spec.imputer and isinstance(imputed[spec.imputer], Exception):
                raise imputed[spec.imputer]
            model = _fit_cell(spec, cfg, tr, imputed, seed)
            res.val_rmse = cate_rmse(model.predict(va.x), va.cate_true)
            tau_te = model.predict(te.x)
            if not np.all(np.isfinite(tau_te)):
                raise FloatingPointError("non-finite CATE predictions")
            res.cate_rmse = cate_rmse(tau_te, te.cate_true)
            res.ate_bias = ate_bias(tau_te, delta)
            _aux_metrics(res, spec, model, tr, te, imputed)
        except Exception as exc:
            res.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        results.append(res)
    _select(results)
    return results


def _select(results):
    groups = {}
    for r in results:
        groups.setdefault(r.spec.group, []).append(r)
    for rs in groups.values():
        ok = [r for r in rs if not r.error and np.isfinite(r.val_rmse)]
        if ok:
            # first-declared wins ties (strict < in the scan)
            best = ok[0]
            for r in ok[1:]:
                if r.val_rmse < best.val_rmse:
                    best = r
            best.selected = True


def _run_jobs(jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [j() for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda j: j(), jobs))


def run_benchmark(config, threads=None, progress=None):
    """Run every (scenario, config, repeat) x roster cell and collect results."""
    cfg = config
    cells = cfg.cells()
    pools = _Pools(cfg)
    report = BenchReport(cfg)
    if not cells:
        return report
    threads = resolve_threads(threads)
    jobs = []
    for scenario in cfg.scenarios:
        for conf in cfg.configs:
            pools.pool(scenario, conf, 0)  # build shared pools up front
            for r in range(cfg.repeats):
                jobs.append(lambda s=scenario, c=conf, r=r: _run_dataset(cfg, pools, s, c, r, cells))
    for out in _run_jobs(jobs, threads):
        report.cells.extend(out)
        if progress:
            progress(out)
    return report


def convergence_run(config, train_sizes, threads=None):
    """Rerun the inner loop per training size with fixed validation/test sets.

    The training rows for size index ``k`` are drawn from the pool units
    outside the validation and test sets with a seed that depends on ``k``,
    so repeated sizes give different training samples.
    """
    cfg = config
    cells = cfg.cells()
    pools = _Pools(cfg)
    report = BenchReport(cfg, convergence=True)
    threads = resolve_threads(threads)
    jobs = []
    for scenario in cfg.scenarios:
        for conf in cfg.configs:
            pool = pools.pool(scenario, conf, 0)
            for r in range(cfg.repeats):
                _, vai, tei = _split(cfg, scenario, conf, r, len(pool))
                rest = np.setdiff1d(np.arange(len(pool)), np.concatenate((vai, tei)))
                for k, size in enumerate(train_sizes):
                    if size > rest.size:
                        raise ValueError(f"training size {size} exceeds the {rest.size} "
                                         "pool units outside validation/test")
                    g = generator(cfg.seed, "conv", scenario.value, conf.name, r, k)
                    tri = np.sort(g.choice(rest, size=size, replace=False))
                    jobs.append(lambda s=scenario, c=conf, r=r, t=tri, k=k:
                                _run_dataset(cfg, pools, s, c, r, cells, t, k))
    for out in _run_jobs(jobs, threads):
        report.cells.extend(out)
    return report


# ---------------------------------------------------------------- reporting

METRIC_COLUMNS = ("scenario", "config", "repeat", "size_index", "n_train", "method",
                  "family", "variant", "imputer", "base_learner", "n_estimators",
                  "selected", "val_rmse", "cate_rmse", "ate_bias", "impute_mae", "ctd",
                  "auc", "error")


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def metrics_csv(report):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(METRIC_COLUMNS)
    for c in report.cells:
        s = c.spec
        wr.writerow([c.scenario, c.config, c.repeat, c.size_index, c.n_train, s.group,
                     s.family.value, s.variant, s.imputer, s.base_learner,
                     s.n_estimators if s.family is Family.SURV_META else "",
                     int(c.selected), _fmt(c.val_rmse), _fmt(c.cate_rmse), _fmt(c.ate_bias),
                     _fmt(c.impute_mae), _fmt(c.ctd), _fmt(c.auc), c.error])
    return buf.getvalue()


def _rank_table(records, allow_missing):
    if not records:
        return RankTable([], [], np.zeros((0, 0)), np.zeros(0), np.zeros(0),
                         {1: np.zeros(0), 3: np.zeros(0), 5: np.zeros(0)})
    return borda_rank(records, "cate_rmse", ks=(1, 3, 5), allow_missing=allow_missing)


def render_report(report, out_dir, formats=("csv", "markdown"), allow_missing=False):
    """Write ``metrics.csv``, ``borda.csv``/``borda.md``, ``winrates.csv``
    and ``provenance.json`` into ``out_dir``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, text):
        p = os.path.join(out_dir, name)
        _atomic_write(p, text)
        written.append(p)

    put("metrics.csv", metrics_csv(report))
    table = _rank_table(report.dataset_records(), allow_missing)
    if "csv" in formats:
        put("borda.csv", table.to_csv())
    if "markdown" in formats:
        put("borda.md", table.to_markdown())
    put("winrates.csv", table.winrates_csv())
    if report.convergence:
        put("convergence.csv", _convergence_csv(report))
    prov = {
        "config_hash": report.config.hash(),
        "seed": report.config.seed,
        "toolkit_version": __version__,
        "config": report.config.to_dict(),
        "n_cells": len(report.cells),
        "n_failed": sum(1 for c in report.cells if c.error),
        "tie_conventions": "ranks tie-averaged; Top-k inclusive of ties at k",
    }
    put("provenance.json", json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return written


def _convergence_csv(report):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["scenario", "config", "repeat", "size_index", "n_train", "method",
                 "cate_rmse"])
    for c in report.cells:
        if c.selected:
            wr.writerow([c.scenario, c.config, c.repeat, c.size_index, c.n_train,
                         c.spec.group, _fmt(c.cate_rmse)])
    return buf.getvalue()


def rank_metrics_file(path, metric="cate_rmse", allow_missing=False):
    """Rank table from a ``metrics.csv`` written by :func:`render_report`."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    groups = {}
    for r in rows:
        if r["selected"] != "1" and not r["error"]:
            continue
        key = ((r["scenario"], r["config"]), (r["method"],))
        groups.setdefault(key, []).append(r)
    records = []
    for (dk, mk), rs in groups.items():
        sel = [r for r in rs if r["selected"] == "1"]
        reps = {r["repeat"] for r in rs}
        bad = len({r["repeat"] for r in sel}) < len(reps)
        val = math.nan if bad else float(np.mean([float(r[metric]) for r in sel]))
        records.append(MetricRecord(dk, mk, val if metric == "cate_rmse" else math.nan,
                                    val if metric == "ate_bias" else math.nan,
                                    error="failed" if bad else ""))
    if not records:
        return _rank_table([], allow_missing)
    return borda_rank(records, metric, ks=(1, 3, 5), allow_missing=allow_missing)
