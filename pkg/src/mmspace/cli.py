"""Command-line front end: ``mmspace <verb> --config cfg.json [--out DIR] [--seed N] [--threads T]``.

Exit codes: 0 all selected checks pass, 1 some check failed, 2 invalid
configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigurationError, InputError
from .reports import CHECKS, ExperimentConfig, emit_report, exit_status, load_reports, run_experiment
from .space import discretize, truncation_box
from .weights import Box

VERBS = {
    "cubes": ["cubes"],
    "bmo": ["bmo"],
    "sharp": ["sharp"],
    "h1": ["h1", "duality"],
    "jn": ["jn"],
    "rdi": ["rdi"],
    "fs": ["fs"],
    "kernel": ["kernel"],
    "isoperimetry": ["isoperimetry"],
    "chains": ["chains"],
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmspace", description="Experiments on weighted metric measure spaces.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ["discretize", *VERBS, "verify-all", "report"]:
        s = sub.add_parser(verb)
        s.add_argument("--config", required=verb != "report", help="experiment config (JSON)")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--seed", type=int, help="random seed (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for independent checks")
        if verb == "report":
            s.add_argument("--format", choices=["json", "csv"], default="csv")
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.out is not None:
        cfg.out = str(Path(args.out))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads < 1:
        raise ConfigurationError("--threads must be >= 1")
    return cfg


def _print(reports) -> None:
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        extra = f"  ({r.error})" if r.error else ""
        print(f"{status}  {r.check:<20s} {r.anchor}{extra}")


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.verb == "report":
            out = args.out
            if out is None and args.config is not None:
                out = _load(args).out
            if out is None:
                raise ConfigurationError("report needs --out or a config with an output directory")
            reports = load_reports(out)
            for p in emit_report(reports, out, args.format):
                print(p)
            return exit_status(reports)
        cfg = _load(args)
        if args.verb == "discretize":
            spec = cfg.spec()
            box = Box.coerce(cfg.box, spec.dimension) if cfg.box is not None else truncation_box(spec)
            X = discretize(spec, cfg.sign, box, cfg.h)
            if cfg.out is None:
                raise ConfigurationError("discretize needs an output directory")
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            path = Path(cfg.out) / "space.npz"
            X.save(path)
            print(json.dumps({"points": X.n, "total_mass": X.total_mass, "path": str(path)}, sort_keys=True))
            return 0
        if args.verb != "verify-all":
            cfg.checks = VERBS[args.verb]
        elif not cfg.checks:
            cfg.checks = list(CHECKS)
        reports = run_experiment(cfg, threads=args.threads)
    except (ConfigurationError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    _print(reports)
    code = exit_status(reports)
    if code:
        print("failed: " + ", ".join(r.check for r in reports if not r.passed), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
