"""Command line: ``stripsim {run,sweep,converge,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ..numerics import NotHermitianError
from ..oracles import OracleError
from .config import ConfigError, load_config, load_raw
from .pipeline import StageError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stripsim", description="Emitters coupled to a 2D boson lattice: chain-mapped MPS dynamics.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: config 'output')")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable (e.g. evolution.D=20)")

    common(sub.add_parser("run", help="single pipeline run"))
    sw = sub.add_parser("sweep", help="independent runs over one parameter")
    common(sw)
    sw.add_argument("--param", required=True, metavar="KEY", help="dotted config key to vary")
    sw.add_argument("--values", required=True, help="comma-separated values")
    cv = sub.add_parser("converge", help="base vs refined run for one knob")
    common(cv)
    cv.add_argument("--knob", required=True, choices=["delta", "D", "n_max", "L_trunc", "alpha"])
    va = sub.add_parser("validate", help="run the built-in invariant suite")
    va.add_argument("--out", metavar="DIR", help="write the report as JSON here")
    va.add_argument("--inject", choices=["non-hermitian-bath"], help="test hook: corrupt an input")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            from .validate import run_suite

            report = run_suite(inject=args.inject)
            for item in report:
                print(f"{'PASS' if item['ok'] else 'FAIL'}  {item['name']}: {item['detail']}")
            if args.out:
                from pathlib import Path

                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "validate.json").write_text(json.dumps(report, indent=2) + "\n")
            return EXIT_OK if all(i["ok"] for i in report) else EXIT_VALIDATION

        load_raw(args.config)  # surface unreadable configs as config errors early
        cfg = load_config(args.config, args.override)
        from . import run as runner

        if args.command == "run":
            outcome = runner.run(cfg, args.out)
            last = outcome.rows[-1]
            print(f"t={last.t:g} C={last.C:.6f} C1={last.C1:.6f} F={last.fidelity:.6f} "
                  f"warnings={len(outcome.manifest['warnings'])}")
        elif args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            for item in runner.sweep(cfg, args.param, values, args.out):
                print(f"{args.param}={item['value']}: C(t_final)={item['final']['C']:.6f}")
        elif args.command == "converge":
            report = runner.converge(cfg, args.knob, args.out)
            print(json.dumps(report, indent=2, sort_keys=True))
            if report["status"] != "ok":
                return EXIT_NUMERIC
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage {exc.stage} failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NotHermitianError, OracleError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
