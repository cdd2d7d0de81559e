"""Command-line workflow.

Subcommands mirror the pipeline stages:

    scatinv synth      --config run.json --run-dir out/
    scatinv preprocess --config run.json --run-dir out/
    scatinv propagate  --config run.json --run-dir out/
    scatinv calibrate  --config run.json --run-dir out/
    scatinv invert     --config run.json --run-dir out/
    scatinv report     --config run.json --run-dir out/
    scatinv selftest [--full]

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

import argparse
import json
import logging
import os
import sys

STAGES = ("synth", "preprocess", "propagate", "calibrate", "invert", "report")


def build_parser():
    parser = argparse.ArgumentParser(prog="scatinv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--run-dir", required=True, help="run directory")
        p.add_argument("--grid-n", type=int, default=None,
                       help="override the inversion grid resolution")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scene noise seed")
    p = sub.add_parser("selftest", help="run the built-in checks")
    p.add_argument("--full", action="store_true",
                   help="full-resolution checks (slow)")
    return parser


def _apply_overrides(cfg, args):
    if getattr(args, "grid_n", None) is not None:
        cfg["grid_n"] = args.grid_n
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("scene", {})["seed"] = args.seed
    return cfg


def main(argv=None):
    threads = os.environ.get("SCATINV_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    from .errors import NumericalError, ValidationError

    try:
        if args.command == "selftest":
            from .pipeline import selftest

            outcome = selftest(reduced=not args.full)
            for check in outcome["checks"]:
                status = "PASS" if check["pass"] else "FAIL"
                print(f"{status} {check['name']}: {check['detail']} "
                      f"[{check['seconds']}s]")
            return 0 if outcome["ok"] else 2

        from . import pipeline

        cfg = pipeline.load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        stage_fn = getattr(pipeline, f"stage_{args.command}")
        out = stage_fn(cfg, args.run_dir)
        if args.command == "invert":
            print(json.dumps({"n_comp": out.n_comp, "max_c": out.max_c,
                              "n0": out.n0, "i0": out.i0}, sort_keys=True))
        elif args.command == "report":
            print(json.dumps(out, sort_keys=True, default=str))
        return 0
    except (ValidationError, FileNotFoundError, KeyError, json.JSONDecodeError) as err:
        print(f"validation error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
