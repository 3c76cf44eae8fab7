"""Command-line front end.

``ssmid <subcommand> --config run.yaml [--seed N] [--out DIR]``

Exit codes: 0 success, 2 configuration error, 3 infeasible search space.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..hybrid import InfeasibleSearchSpace
from .config import ConfigError, load_config
from .experiments import (build_setup, filter_comparison, generate_datasets, optimizer_comparison,
                          run_identification, validate_model)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3

log = logging.getLogger("ssmid")


def _simulate(setup, out, args):
    for p in generate_datasets(setup, out):
        print(f"wrote {p}")


def _identify(setup, out, args):
    rep = run_identification(setup, out, timing=args.timing)
    print(f"L(theta_hat) = {rep['log_likelihood']}  after {rep['n_evals']} evaluations")
    for row in rep["parameters"]:
        print(f"  {row['name']:>14s} = {row['estimate']:.6g}")
    print(f"wrote {Path(out) / 'report.json'}")


def _validate(setup, out, args):
    for row in validate_model(setup, out):
        print("  " + "  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                               for k, v in row.items()))
    print(f"wrote {Path(out) / 'rmse.csv'}")


def _compare_filters(setup, out, args):
    for r in filter_comparison(setup, out):
        print(f"  {r['method']:>5s} N_p={r['n_particles']:<5d} mean={r['mean']:.4f} "
              f"std={r['std']:.4f}")
    print(f"wrote {Path(out) / 'filter_stats.csv'}")


def _compare_optimizers(setup, out, args):
    res = optimizer_comparison(setup, out)
    for name, C in res["curves"].items():
        print(f"  {name:>12s} final mean best L = {C[:, -1].mean():.4f}")
    print(f"wrote {Path(out) / 'optimizer_stats.csv'}")


COMMANDS = {
    "simulate": (_simulate, "synthesize the configured datasets"),
    "identify": (_identify, "identify parameters from the training datasets"),
    "validate": (_validate, "voltage/temperature RMSE on held-out datasets"),
    "compare-filters": (_compare_filters, "likelihood spread of U-IPF vs APF"),
    "compare-optimizers": (_compare_optimizers, "convergence of the optimizer variants"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: config 'outputs')")
        p.add_argument("--timing", action="store_true",
                       help="include wall-clock times in reports (breaks byte-identical re-runs)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        setup = build_setup(cfg, base_dir=Path(args.config).resolve().parent)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out if args.out is not None else cfg.outputs)
    handler = COMMANDS[args.command][0]
    try:
        handler(setup, out, args)
    except InfeasibleSearchSpace as exc:
        print(f"infeasible search space: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
