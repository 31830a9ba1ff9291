"""Command line entry point: ``varipath run <config>``, ``varipath list``, ``varipath version``.

Exit codes: 0 when every check passes, 2 when the run finished but a check
failed, 1 for usage, configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import metadata

from . import inequalities
from .experiments import (EXPERIMENT_OPTIONS, KINDS, ORACLES, ConfigError, RunOutput,
                          load_config, run_experiment)
from .paths import GENERATOR_KINDS
from .problems import FAMILIES
from .reporting import atomic_write_text, dumps, flatten_numbers, to_jsonable, write_csv
from .scalarfn import CATALOG

__all__ = ["main", "list_catalog", "version"]

log = logging.getLogger("varipath")

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "0+unknown"


def list_catalog() -> str:
    lines = ["families:"]
    for name in sorted(FAMILIES):
        schema = FAMILIES[name]
        lines.append(f"  {name}")
        lines += [f"    {k}: {schema[k]}" for k in sorted(schema)]
    lines.append("scalar functions:")
    for name in sorted(CATALOG):
        params, desc = CATALOG[name]
        lines.append(f"  {name}({', '.join(params)}): {desc}")
    lines.append("generators:")
    lines += [f"  {g}" for g in sorted(GENERATOR_KINDS)]
    lines.append("oracles:")
    for name in sorted(ORACLES):
        lines.append(f"  {name}")
        lines += [f"    {k}: {v}" for k, v in sorted(ORACLES[name].items())]
    lines.append("experiment kinds:")
    for kind in KINDS:
        lines.append(f"  {kind}")
        lines += [f"    {k}: {v}" for k, v in sorted(EXPERIMENT_OPTIONS[kind].items())]
    lines.append(f"constants: slack={inequalities.SLACK!r} equality_tol={inequalities.EQUALITY_TOL!r} "
                 f"gamma_cap={inequalities.GAMMA_CAP!r}")
    return "\n".join(lines) + "\n"


def _write_outputs(outdir: str, echo: dict, out: RunOutput, failed: str | None) -> dict:
    report = {"config_echo": echo, "results": [r.to_dict() for r in out.results],
              "failures": out.failures}
    if failed is not None:
        report["failed"] = True
        report["error"] = failed
    report = to_jsonable(report)
    for name, (header, rows) in sorted(out.tables.items()):
        write_csv(os.path.join(outdir, name), header, rows)
    write_csv(os.path.join(outdir, "metrics.csv"), ["key", "value"], flatten_numbers(report))
    atomic_write_text(os.path.join(outdir, "report.json"), dumps(report))
    return report


def _cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = load_config(raw)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    outdir = args.output or cfg.output
    if not outdir:
        print("error: no output directory (set 'output' or pass --output)", file=sys.stderr)
        return EXIT_ERROR
    out = RunOutput()
    failed = None
    try:
        run_experiment(cfg, out)
    except Exception as exc:  # partial outputs are still written, marked failed
        log.exception("experiment aborted")
        failed = f"{type(exc).__name__}: {exc}"
    report = _write_outputs(outdir, raw, out, failed)
    for r in report["results"]:
        print(f"{r['verdict'].upper():5s} {r['name']}")
    if failed is not None:
        print(f"error: {failed}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_CHECK_FAILED if report["failures"] else EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="varipath", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="output directory (overrides the config)")
    sub.add_parser("list", help="print the catalog of families, functions and oracles")
    sub.add_parser("version", help="print the package version")
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        sys.stdout.write(list_catalog())
        return EXIT_OK
    if args.command == "version":
        print(version())
        return EXIT_OK
    return _cmd_run(args)
