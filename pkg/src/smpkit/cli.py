"""Command-line interface: run experiments, list fixtures, emit plot data.

Exit codes: 0 success, 1 error, 2 scientifically inconclusive (Undecided).
"""

import argparse
import json
import sys

from . import harness


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="smpkit",
        description="Reproducible potential-theory experiments: point "
                    "classification, fine limits, weak supersolution tests, "
                    "maximum-principle dichotomy checks, Feynman-Kac "
                    "estimators, and Riesz capacities.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON config file")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
    p_run.add_argument("--output-dir", default=None,
                       help="override the config's output directory")

    sub.add_parser("catalog", help="list registered closed-form fixtures")

    p_pd = sub.add_parser("plotdata", help="emit CSV plot data from a report")
    p_pd.add_argument("report", help="path to a report.json")
    p_pd.add_argument("--what", required=True,
                      help="one of: fine-limit, classify, capacity, fk")

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config", help="path to a JSON config file")

    args = ap.parse_args(argv)

    if args.cmd == "catalog":
        for entry in harness.catalog_list():
            print(f"{entry['name']:24s} {entry['note']}")
        return 0

    if args.cmd == "validate":
        errors = harness.validate_config(_load(args.config))
        if errors:
            for e in errors:
                print(f"config error: {e}", file=sys.stderr)
            return 1
        print("config ok")
        return 0

    if args.cmd == "plotdata":
        report = _load(args.report)
        try:
            sys.stdout.write(harness.emit_plotdata(report, args.what))
        except ValueError as e:
            print(str(e), file=sys.stderr)
            return 1
        return 0

    # run
    cfg = _load(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        report, code = harness.run(cfg, output_dir=args.output_dir)
    except ValueError as e:
        print(str(e), file=sys.stderr)
        return 1
    print(harness.report_json(report), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
