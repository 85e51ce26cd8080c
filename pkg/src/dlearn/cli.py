"""Command-line entry point: ``dlearn simulate | fit | evaluate | mccv | export-dgp``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import dgp, harness, metrics
from .errors import DLearnError

log = logging.getLogger("dlearn")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--method", dest="methods", help="comma-separated methods, e.g. D,SD")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--output", "-o")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--residvar", dest="candidates",
                   help="comma-separated residual families (linear-L1,random-forest,gradient-boosting)")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _data_args(p: argparse.ArgumentParser):
    p.add_argument("input", nargs="?", help="CSV file with a header row")
    p.add_argument("--outcome")
    p.add_argument("--treatment")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--propensity", choices=("constant", "column", "estimate"))
    p.add_argument("--pi", type=float, help="constant propensity (default 1/K)")
    p.add_argument("--propensity-column", dest="propensity_column")
    p.add_argument("--binary01", action="store_const", const=True,
                   help="read treatment labels 0/1 as -1/+1")
    p.add_argument("-K", dest="K", type=int, help="number of arms for multi-arm data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="mode", required=True)

    p = sub.add_parser("simulate", help="replicate a simulation scenario")
    _common(p)
    p.add_argument("--scenario", type=int)
    p.add_argument("-n", type=int)
    p.add_argument("-p", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)

    p = sub.add_parser("fit", help="fit one method on a CSV and save its coefficients as JSON")
    _common(p)
    _data_args(p)

    p = sub.add_parser("evaluate", help="empirical value of a saved model on a CSV")
    _common(p)
    _data_args(p)
    p.add_argument("--model", required=True, help="JSON written by `fit`")

    p = sub.add_parser("mccv", help="Monte Carlo cross-validation on a CSV")
    _common(p)
    _data_args(p)
    p.add_argument("-n", type=int, help="training rows per split (default: half)")
    p.add_argument("--reps", type=int, help="number of random splits")

    p = sub.add_parser("export-dgp", help="write a simulated dataset as CSV")
    _common(p)
    p.add_argument("--scenario", type=int)
    p.add_argument("-n", type=int)
    p.add_argument("-p", type=int)
    return parser


def _config(ns) -> harness.ExperimentConfig:
    over = {k: v for k, v in vars(ns).items() if k not in ("config", "verbose")}
    return harness.load_config(ns.config, **over)


def _print_aggregates(report, out):
    agg = report.aggregates()
    for method, vals in agg.items():
        parts = [f"{m}={mean:.4f} (SEM {sem:.4f})" for m, (mean, sem) in vals.items()]
        print(f"{method}: " + ", ".join(parts), file=out)
    if any(report.dropped.values()):
        print(f"undefined-value iterations dropped: {report.dropped}", file=out)


def run(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(ns)
        if cfg.mode == "simulate":
            report = harness.run_simulation(cfg)
            if cfg.output:
                harness.write_report(report, cfg.output, cfg.format)
            _print_aggregates(report, out)
        elif cfg.mode == "mccv":
            data = harness.load_config_csv(cfg)
            report = harness.run_mccv(cfg, data)
            if cfg.output:
                harness.write_report(report, cfg.output, cfg.format)
            _print_aggregates(report, out)
        elif cfg.mode == "fit":
            data = harness.load_config_csv(cfg)
            if len(cfg.methods) != 1:
                raise harness.InvalidConfig("fit takes exactly one --method")
            model = harness.fit_methods(data, cfg.methods, cfg, cfg.seed)[cfg.methods[0]]
            text = json.dumps(harness.model_to_dict(model, cfg.covariates), indent=2)
            if cfg.output:
                with open(cfg.output, "w") as fh:
                    fh.write(text + "\n")
            else:
                print(text, file=out)
        elif cfg.mode == "evaluate":
            data = harness.load_config_csv(cfg)
            with open(cfg.model) as fh:
                rule = harness.SavedRule.from_dict(json.load(fh))
            print(f"value={metrics.empirical_value(rule, data)!r} n={data.n}", file=out)
        elif cfg.mode == "export-dgp":
            if cfg.scenario is None:
                raise harness.InvalidConfig("export-dgp needs --scenario")
            if not cfg.output:
                raise harness.InvalidConfig("export-dgp needs --output")
            lab = dgp.generate(cfg.scenario, cfg.n, cfg.p, cfg.seed)
            harness.write_dataset_csv(lab.dataset, cfg.output)
    except DLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run())
