"""Command-line interface.

    qsysid simulate  [--config cfg.json] [--out DIR] [--seed S] [--quadrature q|p]
    qsysid identify  RECORD.csv [--config ...] [--solver lifted|reduced|both]
    qsysid validate  MODEL.json RECORD.csv [--config ...]
    qsysid table     [--config ...] [--out DIR]
    qsysid pipeline  [--config ...] [--out DIR] [--seed S] [--solver ...]

Exit status is 0 on success, 2 for configuration errors or missing
inputs and 3 for numerical failures, which also write ``failure.json``
to the output directory.
"""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from .errors import ConfigError, MissingArtifacts, QSysIdError
from .pipeline import (cmd_simulate, cmd_table, identify_record, load_config, run_pipeline,
                       validate_model)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; defaults reproduce the cavity experiment")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="run a single seed instead of the config list")
    common.add_argument("--solver", choices=["lifted", "reduced", "both"])
    common.add_argument("--quadrature", choices=["q", "p"])
    common.add_argument("--workers", type=int, help="parallel processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qsysid", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write synthetic records")
    ident = sub.add_parser("identify", parents=[common], help="identify models from a record")
    ident.add_argument("record")
    val = sub.add_parser("validate", parents=[common], help="validation metrics for a model")
    val.add_argument("model")
    val.add_argument("record")
    sub.add_parser("table", parents=[common], help="aggregate metrics into tables")
    sub.add_parser("pipeline", parents=[common], help="simulate, identify, validate, tabulate")
    return p


def _config(args):
    overrides = {"out": args.out, "solver": args.solver, "workers": args.workers}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        overrides["seeds"] = [args.seed]
    if args.quadrature is not None:
        overrides["quadratures"] = [args.quadrature]
    return load_config(args.config, overrides)


def _fail(out, exc, command):
    path = Path(out or ".") / "failure.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump({"command": command, "error": type(exc).__name__, "message": str(exc),
                   "traceback": traceback.format_exc()}, fh, indent=1)
        fh.write("\n")
    print(f"error: {type(exc).__name__}: {exc} (details in {path})", file=sys.stderr)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "simulate":
            for path in cmd_simulate(cfg):
                print(path)
        elif args.command == "identify":
            for (n, solver), path in sorted(identify_record(cfg, args.record).items()):
                print(f"n={n} {solver}: {path}")
        elif args.command == "validate":
            print(validate_model(cfg, args.model, args.record))
        elif args.command == "table":
            for path in cmd_table(cfg):
                print(path)
        else:
            failures = run_pipeline(cfg)
            for path in sorted(Path(cfg.out).glob("table_*.md")):
                print(path)
            if failures:
                raise QSysIdError(f"{len(failures)} unit(s) failed: {failures}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifacts, FileNotFoundError) as exc:
        _fail(cfg.out, exc, args.command)
        return EXIT_CONFIG
    except QSysIdError as exc:
        _fail(cfg.out, exc, args.command)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
