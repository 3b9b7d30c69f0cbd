"""Command-line entry point.

    survivorlab <command> --config PATH [--out DIR] [--seed N] [--jobs K]

Exit status: 0 every check passed, 1 a check failed, 2 invalid scenario,
3 runtime error. On a nonzero exit a ``<command>_failures.json`` manifest is
written next to the reports and echoed to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import traceback
from pathlib import Path

from . import __version__
from .acceptance import DEFAULT_SEED, run_all
from .config import ConfigError, parse_scenario
from .experiments import COMMANDS, Report, jsonable

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survivorlab",
                                description="Particle-survivor simulations and limit checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=[*COMMANDS, "acceptance"])
    p.add_argument("--config", type=Path, help="scenario TOML file (optional for acceptance)")
    p.add_argument("--out", type=Path, help="output directory (default: the scenario's)")
    p.add_argument("--seed", type=int, help="override the scenario's master seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel replications")
    p.add_argument("--only", type=int, nargs="+", metavar="K",
                   help="acceptance: run only these criteria")
    return p


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _manifest(out: Path | None, command: str, code: int, failures: list) -> None:
    doc = json.dumps({"command": command, "exit_code": code, "version": __version__,
                      "failures": failures}, indent=2, sort_keys=True, default=str)
    print(doc, file=sys.stderr)
    if out is not None:
        try:
            _write(out, f"{command}_failures.json", doc + "\n")
        except OSError:
            pass


def _acceptance(args) -> int:
    seed = DEFAULT_SEED
    out = args.out or Path("out")
    if args.config is not None:
        cfg = parse_scenario(args.config, seed_override=args.seed)
        seed, out = cfg.seed, args.out or Path(cfg.output_dir)
    elif args.seed is not None:
        seed = args.seed
    results = run_all(seed, args.jobs, echo=lambda s: print(s, flush=True), only=args.only)
    doc = {"command": "acceptance", "version": __version__, "seed": seed,
           "pass": all(r.passed for r in results),
           "criteria": jsonable([r.to_dict() for r in results])}
    _write(out, "acceptance.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["criterion", "title", "pass"])
    for r in results:
        w.writerow([r.number, r.title, int(r.passed)])
    _write(out, "acceptance.csv", buf.getvalue())
    failed = [r.to_dict() for r in results if not r.passed]
    if failed:
        _manifest(out, "acceptance", EXIT_FAIL, jsonable(failed))
        return EXIT_FAIL
    return EXIT_PASS


def run_command(command: str, config, *, out: Path | None = None, jobs: int = 1) -> Report:
    """Run one experiment and write ``<command>.json`` and ``<command>.csv``."""
    report = COMMANDS[command](config, jobs)
    out = out or Path(config.output_dir)
    _write(out, f"{command}.json", report.json())
    _write(out, f"{command}.csv", report.csv())
    return report


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    try:
        if args.command == "acceptance":
            return _acceptance(args)
        if args.config is None:
            raise ConfigError([f"--config is required for '{args.command}'"])
        cfg = parse_scenario(args.config, seed_override=args.seed)
        out = out or Path(cfg.output_dir)
        report = run_command(args.command, cfg, out=out, jobs=args.jobs)
        for c in report.checks:
            print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}")
        print(f"wrote {out / (args.command + '.json')} and {out / (args.command + '.csv')}")
        if not report.passed:
            _manifest(out, args.command, EXIT_FAIL, report.failures())
            return EXIT_FAIL
        return EXIT_PASS
    except ConfigError as exc:
        _manifest(out, args.command, EXIT_CONFIG, exc.errors)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _manifest(out, args.command, EXIT_CONFIG, [f"{exc.filename}: no such file"])
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        _manifest(out, args.command, EXIT_RUNTIME,
                  [f"{type(exc).__name__}: {exc}", traceback.format_exc(limit=5)])
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
