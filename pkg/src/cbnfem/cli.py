"""Command line: ``cbnfem {run,compare,properties,sparsity,suite}``.

Exit codes: 0 success, 2 configuration/placement/IO problems, 3 numerical
failures (solver breakdown, failed property checks, failed suite assertions).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import METHODS, load_config
from .errors import CbnError, ConfigError, SuiteFailure
from .experiments import SUITES
from .metrics import reports_to_csv
from .runner import compare_cases, property_report, run_case, sparsity_report

log = logging.getLogger("cbnfem")


def _load(args, path=None):
    cfg = load_config(path or args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    if args.method:
        cfg.method = args.method
    manifest = run_case(cfg, args.out)
    eff = manifest["effectivity"]
    if eff is not None:
        print(f"{cfg.name} {cfg.method}: r_e={eff['r_e']:.6e} r_u={eff['r_u']:.6e}")
    return 0


def cmd_compare(args) -> int:
    configs = [_load(args, p) for p in args.config]
    if args.methods:
        if len(configs) != 1:
            raise ConfigError("--methods needs exactly one --config")
        configs = [dataclasses.replace(configs[0], method=m) for m in args.methods.split(",")]
        for c in configs:
            if c.method not in METHODS:
                raise ConfigError(f"unknown method {c.method!r}; choose from {METHODS}")
    rows = compare_cases(configs, args.out, args.name)
    sys.stdout.write(reports_to_csv(rows))
    return 0


def cmd_properties(args) -> int:
    cfg = _load(args)
    rows = property_report(cfg, args.trials, args.max_elements)
    text = reports_to_csv(rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"{cfg.name}_properties.csv").write_text(text)
    failed = [r for r in rows if r["verdict"] != "pass"]
    for r in failed:
        log.error("element %d: %s violation %.3e above %.1e", r["element"], r["property"],
                  r["violation"], r["tolerance"])
    print(f"{len(rows) - len(failed)}/{len(rows)} property checks passed")
    return 3 if failed else 0


def cmd_sparsity(args) -> int:
    cfg = _load(args)
    rows = sparsity_report(cfg)
    text = reports_to_csv(rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"{cfg.name}_sparsity.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_suite(args) -> int:
    result = SUITES[args.name](out=args.out, strict=False)
    sys.stdout.write(result.csv())
    for text, ok in result.checks:
        print(f"{'PASS' if ok else 'FAIL'}  {text}")
    return 0 if result.passed else SuiteFailure.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbnfem", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, multi=False):
        if config:
            sp.add_argument("--config", required=True, action="append" if multi else "store",
                            help="YAML case file" + (" (repeatable)" if multi else ""))
        sp.add_argument("--out", default="results", help="output directory (default: results)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads for per-element condensation")
        sp.add_argument("--seed", type=int, default=None, help="override the case seed")

    sp = sub.add_parser("run", help="solve one case and write VTK, CSV and a manifest")
    common(sp)
    sp.add_argument("--method", choices=METHODS, help="override the configured method")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="compare methods on one benchmark instance")
    common(sp, multi=True)
    sp.add_argument("--methods", help="comma-separated methods applied to a single config")
    sp.add_argument("--name", default="compare", help="CSV file stem")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("properties", help="check shape-function properties per coarse element")
    common(sp)
    sp.add_argument("--trials", type=int, default=100, help="random points per element")
    sp.add_argument("--max-elements", type=int, default=None)
    sp.set_defaults(func=cmd_properties)

    sp = sub.add_parser("sparsity", help="global system sizes and nonzeros per method")
    common(sp)
    sp.set_defaults(func=cmd_sparsity)

    sp = sub.add_parser("suite", help="run a canned study")
    sp.add_argument("name", choices=sorted(SUITES))
    common(sp, config=False)
    sp.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CbnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
