"""Command-line entry point: ``survhte {generate,run,convergence,rank,report}``."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .bench import (CONFIG_SCHEMA, ExperimentConfig, convergence_run, export_dataset,
                    rank_metrics_file, render_report, resolve_threads, run_benchmark,
                    _atomic_write)
from .datagen import DatasetSpec


def _horizon(text):
    if text in (None, "max_observed"):
        return None
    return math.inf if text == "inf" else float(text)


def _load_config(args):
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "regenerate_pool", False):
        cfg.regenerate_pool = True
    if args.out:
        cfg.out_dir = args.out
    return cfg


def cmd_generate(args):
    spec = DatasetSpec(args.scenario, args.config, args.n, args.seed or 0,
                       args.estimand, _horizon(args.horizon))
    path = export_dataset(spec, args.out)
    print(path)


def cmd_run(args):
    cfg = _load_config(args)
    report = run_benchmark(cfg, threads=args.threads)
    for p in render_report(report, cfg.out_dir, allow_missing=args.allow_missing):
        print(p)
    return 1 if any(c.error for c in report.cells) and not args.allow_missing else 0


def cmd_convergence(args):
    cfg = _load_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    report = convergence_run(cfg, sizes, threads=args.threads)
    for p in render_report(report, cfg.out_dir, allow_missing=args.allow_missing):
        print(p)


def cmd_rank(args):
    table = rank_metrics_file(args.metrics, args.metric, args.allow_missing)
    sys.stdout.write(table.to_markdown())


def cmd_report(args):
    table = rank_metrics_file(args.metrics, args.metric, args.allow_missing)
    out = args.out or os.path.dirname(os.path.abspath(args.metrics))
    files = {}
    if args.format in ("csv", "all"):
        files["borda.csv"] = table.to_csv()
        files["winrates.csv"] = table.winrates_csv()
    if args.format in ("markdown", "all"):
        files["borda.md"] = table.to_markdown()
    for name, text in files.items():
        p = os.path.join(out, name)
        _atomic_write(p, text)
        print(p)


def cmd_schema(args):
    sys.stdout.write(json.dumps(CONFIG_SCHEMA, indent=2) + "\n")


def build_parser():
    p = argparse.ArgumentParser(prog="survhte", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--out", required=out_required, help="output path or directory")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $SURVHTE_THREADS or 1)")
        sp.add_argument("--allow-missing", action="store_true",
                        help="rank over present cells when some cells failed")

    g = sub.add_parser("generate", help="export one synthetic dataset as CSV")
    common(g, out_required=True)
    g.add_argument("--scenario", required=True, choices=list("ABCDE"))
    g.add_argument("--config", required=True, help="e.g. RCT-50, OBS-CPS-InfC")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--estimand", default="RMST", choices=["RMST", "SURV_PROB"])
    g.add_argument("--horizon", default="max_observed",
                   help="max_observed, inf or a positive number")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run a benchmark from a JSON config")
    common(r)
    r.add_argument("config", help="experiment config (JSON)")
    r.add_argument("--regenerate-pool", action="store_true",
                   help="draw a fresh 50,000-unit pool per repeat")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convergence", help="RMSE versus training size")
    common(c)
    c.add_argument("config")
    c.add_argument("--sizes", required=True, help="comma-separated training sizes")
    c.add_argument("--regenerate-pool", action="store_true")
    c.set_defaults(func=cmd_convergence)

    k = sub.add_parser("rank", help="print the Borda table of a metrics.csv")
    common(k)
    k.add_argument("metrics")
    k.add_argument("--metric", default="cate_rmse", choices=["cate_rmse", "ate_bias"])
    k.set_defaults(func=cmd_rank)

    o = sub.add_parser("report", help="write rank files for a metrics.csv")
    common(o)
    o.add_argument("metrics")
    o.add_argument("--metric", default="cate_rmse", choices=["cate_rmse", "ate_bias"])
    o.add_argument("--format", default="all", choices=["csv", "markdown", "all"])
    o.set_defaults(func=cmd_report)

    s = sub.add_parser("schema", help="print the config JSON schema")
    s.set_defaults(func=cmd_schema)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if hasattr(args, "threads"):
        args.threads = resolve_threads(args.threads)
    try:
        rc = args.func(args)
    except (ValueError, OSError) as exc:
        print(f"survhte: error: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
