"""Command-line front end.

    lieflow verify   --n 3 --grading 0,1,0 --mode exact --samples 20
    lieflow solve    --config matrix-toda-m1.json --out run/
    lieflow residual --config grade2-a4.json
    lieflow goursat  --config scalar-toda.json
    lieflow report   --config grade2-a4.json --out run/

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical breakdown (a partial report is still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources

from .config import ConfigError, load_config
from .pipeline import Breakdown, build_report, dumps_report, run_fields, run_verify, validate_report

COMMANDS = ("verify", "solve", "residual", "goursat", "report")
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_BREAKDOWN = 0, 1, 2, 3


def shipped_configs() -> list[str]:
    root = resources.files("lieflow").joinpath("configs")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config(path: str):
    """A file path, or the name of a shipped configuration."""
    if os.path.exists(path):
        return path
    name = path if path.endswith(".json") else path + ".json"
    if name in shipped_configs():
        return resources.files("lieflow").joinpath("configs", name)
    raise ConfigError("--config", f"no such file or shipped config: {path}")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or shipped config name")
    common.add_argument("--n", type=int, help="rank of A_n")
    common.add_argument("--grading", help="grading vector, e.g. 0,1,0")
    common.add_argument("--mode", choices=("float", "exact"), help="arithmetic mode")
    common.add_argument("--samples", type=int, help="random samples for the identity suite")
    common.add_argument("--seed", type=int, help="seed for the samplers")
    common.add_argument("--tol", type=float, help="tolerance for algebraic identities")
    common.add_argument("--h", type=float, help="coarsest grid step")
    common.add_argument("--refine", type=int, help="number of grid levels (h, h/2, ...)")
    common.add_argument("--out", help="directory for report.json and field dumps")
    parser = argparse.ArgumentParser(prog="lieflow", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "verify": "Chevalley relations and the sampled identity suite",
        "solve": "flows, fields, pointwise identities, residual study and CSV dumps",
        "residual": "finite-difference residuals of the field equations with order estimates",
        "goursat": "re-integrate the fields from boundary data and compare",
        "report": "everything above in one report",
    }
    for cmd in COMMANDS:
        sub.add_parser(cmd, parents=[common], help=helps[cmd])
    return parser


def _overrides(args) -> dict:
    over = {}
    for key in ("n", "grading", "mode", "samples", "seed"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    if args.tol is not None:
        over["tolerances"] = {"identity": args.tol}
    grid = {}
    if args.h is not None:
        grid["h"] = args.h
    if args.refine is not None:
        grid["refinements"] = args.refine
    if grid:
        over["grid"] = grid
    return over


def _summary(report: dict, stream) -> None:
    for chk in report["checks"]:
        flag = "PASS" if chk["passed"] else "FAIL"
        order = "" if chk["order"] is None else f" order={chk['order'] if isinstance(chk['order'], str) else format(chk['order'], '.3f')}"
        print(f"{flag} {chk['name']}: max={chk['residual_max']:.3e} n={chk['count']}{order}", file=stream)
    if report["error"]:
        print(f"ABORTED {report['error']['kind']}: {report['error']['message']}", file=stream)
    print("overall:", "PASS" if report["passed"] else "FAIL", file=stream)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = _parser().parse_args(argv)
    try:
        path = resolve_config(args.config) if args.config else None
        cfg = load_config(path, _overrides(args))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=stderr)
        return EXIT_CONFIG
    if args.command in ("solve", "residual", "goursat", "report") and cfg.mode == "exact":
        if cfg.coefficients.has_zero_grade:
            print("configuration error: mode: exact flows need vanishing A0/B0", file=stderr)
            return EXIT_CONFIG
    checks, error = [], None
    try:
        if args.command in ("verify", "report"):
            checks = run_verify(cfg)
        if args.command != "verify":
            checks = run_fields(cfg, args.command, args.out, checks=checks)
    except Breakdown as exc:
        checks, error = exc.checks, exc.error
    report = build_report(args.command, cfg, checks, error)
    validate_report(report)
    text = dumps_report(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(text)
        _summary(report, stdout)
    else:
        stdout.write(text)
        _summary(report, stderr)
    if error is not None:
        return EXIT_BREAKDOWN
    return EXIT_OK if report["passed"] else EXIT_FAILED


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
