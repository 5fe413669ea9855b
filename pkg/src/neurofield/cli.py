"""Command-line entry point.

::

    neurofield run SPEC.yaml [--seed N] [--out DIR] [--scale desk|paper]
    neurofield preset NAME --print [--lambda-even HZ] [--rows R --cols C]
    neurofield kinds

Errors go to stderr as JSON lines (``{"error": ..., "message": ...}``) and
the exit code is nonzero.  ``NEUROFIELD_WORKERS`` sets the worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import __version__
from .config import SpecError, dump_yaml, model_from_dict, model_to_dict, parse_config
from .experiments import KINDS, ExperimentError, default_out_dir, run_experiment
from .model import PRESETS, ConfigError


def _error(kind: str, message: str, **extra) -> None:
    rec = {"error": kind, "message": message, **{k: v for k, v in extra.items() if v is not None}}
    sys.stderr.write(json.dumps(rec) + "\n")


def _cmd_run(args) -> int:
    spec = parse_config(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.scale is not None:
        spec = replace(spec, scale=args.scale)
    out = args.out or default_out_dir(spec)
    manifest = run_experiment(spec, out)
    files = ", ".join(o["file"] for o in manifest["outputs"])
    print(f"{spec.kind}: wrote {files} and manifest.json to {out} ({manifest['wall_time_s']:.1f} s)")
    return 0


def _cmd_preset(args) -> int:
    if not args.print:
        _error("usage", "nothing to do; pass --print to show the preset")
        return 2
    values = {"preset": args.name, "lambda_even": args.lambda_even, "rows": args.rows, "cols": args.cols}
    sys.stdout.write(dump_yaml(model_to_dict(model_from_dict(values))))
    return 0


def _cmd_kinds(args) -> int:
    for kind, params in KINDS.items():
        print(f"{kind}: {', '.join(params)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neurofield", description="Stochastic E/I network experiments.")
    ap.add_argument("--version", action="version", version=f"neurofield {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment spec file")
    run.add_argument("spec", help="YAML experiment file")
    run.add_argument("--seed", type=int, help="override the spec's seed")
    run.add_argument("--out", help="output directory (default: spec 'out' or runs/<kind>-seed<N>)")
    run.add_argument("--scale", choices=("desk", "paper"), help="default params scale")
    run.set_defaults(func=_cmd_run)

    pre = sub.add_parser("preset", help="show a preset model as an explicit config")
    pre.add_argument("name", type=str.upper, choices=sorted(PRESETS))
    pre.add_argument("--print", action="store_true", help="print the flat YAML model mapping")
    pre.add_argument("--lambda-even", type=float, default=6000.0, help="drive in spikes/s (default 6000)")
    pre.add_argument("--rows", type=int, default=3)
    pre.add_argument("--cols", type=int, default=3)
    pre.set_defaults(func=_cmd_preset)

    kinds = sub.add_parser("kinds", help="list experiment kinds and their params")
    kinds.set_defaults(func=_cmd_kinds)
    return ap


class _JsonArgumentParserError(Exception):
    pass


def main(argv=None) -> int:
    ap = build_parser()

    def fail(message):
        raise _JsonArgumentParserError(message)

    ap.error = fail
    for action in ap._subparsers._group_actions:
        for p in action.choices.values():
            p.error = fail
    try:
        args = ap.parse_args(argv)
    except _JsonArgumentParserError as exc:
        _error("usage", str(exc))
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SpecError as exc:
        _error("spec", str(exc), line=exc.line, key=exc.key, file=getattr(args, "spec", None))
    except ConfigError as exc:
        _error("config", str(exc))
    except ExperimentError as exc:
        _error("experiment", str(exc))
    except OSError as exc:
        _error("io", f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))
    return 1


if __name__ == "__main__":
    sys.exit(main())
