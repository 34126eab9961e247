"""Command-line front end.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid config,
3 runtime error.  ``report.json`` is deterministic for a fixed config and
seed; run metadata (timestamps, versions) goes to ``metadata.json``.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .checks import run_check
from .config import CHECK_NAMES, load_scenario
from .errors import ConfigError, NormShiftError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

COMMANDS = {
    ("field", "eval"): ["field"],
    ("trajectory",): ["trajectory"],
    ("shift",): ["shift"],
    ("section", "check"): ["section"],
    ("recover-w",): ["recover_w"],
    ("round-trip",): ["round_trip"],
}


def _add_common(p):
    p.add_argument("--config", required=True, help="scenario TOML file")
    p.add_argument("--out", default="normshift-out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--threshold-scale", type=float, default=1.0,
                   help="multiply every tolerance by this factor (lower bounds are divided)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normshift",
                                     description="Normal-shift force fields: build and verify.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    field = sub.add_parser("field", help="force field evaluation")
    fsub = field.add_subparsers(dest="action", required=True)
    _add_common(fsub.add_parser("eval", help="gauge and scalar-ansatz checks on random states"))

    _add_common(sub.add_parser("trajectory", help="integrate trajectories, check W conservation"))
    _add_common(sub.add_parser("shift", help="normal shift of a hypersurface patch"))

    section = sub.add_parser("section", help="section residuals")
    ssub = section.add_subparsers(dest="action", required=True)
    _add_common(ssub.add_parser("check", help="closedness and normalization residuals"))

    _add_common(sub.add_parser("recover-w", help="Pfaff reconstruction of W"))
    _add_common(sub.add_parser("round-trip", help="1-form construction and line integrals"))

    scenario = sub.add_parser("scenario", help="run every check in a scenario")
    csub = scenario.add_subparsers(dest="action", required=True)
    _add_common(csub.add_parser("run", help="run all [checks.*] blocks"))
    return parser


def _checks_for(args, scenario):
    if args.command == "scenario":
        names = [n for n in CHECK_NAMES if n in scenario.checks]
        if not names:
            raise ConfigError("checks: scenario run needs at least one [checks.*] block")
        return names
    key = (args.command, args.action) if hasattr(args, "action") else (args.command,)
    return COMMANDS[key]


def _write_json(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n")


def _metadata(args, started):
    return {
        "normshift_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba_enabled": _accel.USE_NUMBA,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
        "argv": sys.argv[1:],
    }


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    out = Path(args.out)
    try:
        scenario = load_scenario(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: expected a non-negative integer")
            scenario.seed = args.seed
        if not args.threshold_scale > 0:
            raise ConfigError("--threshold-scale: expected a positive number")
        names = _checks_for(args, scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    command = " ".join(x for x in (args.command, getattr(args, "action", None)) if x)
    report = {
        "scenario": scenario.name,
        "version": scenario.version,
        "command": command,
        "seed": scenario.seed,
        "threshold_scale": args.threshold_scale,
        "generator": scenario.generator,
        "chart": {"name": scenario.chart.name, "n": scenario.chart.n,
                  "lo": scenario.chart.lo.tolist(), "hi": scenario.chart.hi.tolist()},
        "checks": {},
    }
    code = EXIT_PASS
    for name in names:
        try:
            result = run_check(name, scenario, args.threshold_scale, out)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except NormShiftError as exc:
            result = {"passed": False, "error": {"type": type(exc).__name__,
                                                 "check": name, "message": str(exc)}}
            code = EXIT_RUNTIME
            print(f"runtime error in {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        report["checks"][name] = result
        status = "PASS" if result["passed"] else "FAIL"
        print(f"{status} {name}")
        for failure in result.get("failures", []):
            print(f"  {failure}")
        if not result["passed"] and code == EXIT_PASS:
            code = EXIT_FAIL
    report["passed"] = code == EXIT_PASS
    report["exit_code"] = code
    _write_json(out / "report.json", report)
    _write_json(out / "metadata.json", _metadata(args, started))
    return code


if __name__ == "__main__":
    sys.exit(main())
