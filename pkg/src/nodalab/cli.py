"""Command-line entry point: ``nodalab <subcommand> --scenario FILE --out DIR``.

Exit codes: 0 success, 1 audit failure (or warning under ``--strict``),
2 invalid scenario or usage, 3 domain coverage missing for a requested point
and scale.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .errors import DomainError, NodalabError, ScenarioError
from .io import canonical_json, sha256_bytes, write_csv, write_json
from .scenario import MODULES, load_scenario

log = logging.getLogger("nodalab")

EXIT_OK, EXIT_AUDIT, EXIT_SCHEMA, EXIT_DOMAIN = 0, 1, 2, 3


def versions() -> dict:
    import numpy
    import scipy
    out = {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
           "nodalab": __version__}
    for mod in ("numba", "pyamg"):
        try:
            out[mod] = __import__(mod).__version__
        except ImportError:
            out[mod] = None
    return out


def write_outputs(out_dir: Path, res) -> dict:
    """Write tables and blobs; return ``{file name: sha256}`` in sorted order."""
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, (header, rows) in sorted(res.tables.items()):
        hashes[f"{name}.csv"] = write_csv(out_dir / f"{name}.csv", header, rows)
    for name, data in sorted(res.blobs.items()):
        (out_dir / name).write_bytes(data)
        hashes[name] = sha256_bytes(data)
    hashes["summary.json"] = write_json(out_dir / "summary.json", res.summary)
    return hashes


def _run_one(path: str, module: str, out_root: Path, seed, strict: bool, batch: bool) -> tuple[int, dict]:
    from .runners import run_scenario
    t0 = time.perf_counter()
    try:
        scn = load_scenario(path, module)
    except ScenarioError as exc:
        log.error("%s: %s (keys: %s)", path, exc, ", ".join(exc.keys))
        return EXIT_SCHEMA, {"scenario": path, "status": "schema-error", "keys": exc.keys, "error": str(exc)}
    if seed is not None:
        scn.seed = int(seed)
    out_dir = out_root / scn.name if batch else out_root
    entry = {"scenario": path, "name": scn.name, "module": scn.module, "seed": scn.seed,
             "scenario_sha256": sha256_bytes(canonical_json(scn.to_dict()).encode())}
    try:
        res = run_scenario(scn)
    except ScenarioError as exc:
        log.error("%s: %s (keys: %s)", path, exc, ", ".join(exc.keys))
        return EXIT_SCHEMA, {**entry, "status": "schema-error", "keys": exc.keys, "error": str(exc)}
    except DomainError as exc:
        log.error("%s: missing domain coverage: %s", path, exc)
        return EXIT_DOMAIN, {**entry, "status": "domain-error", "error": str(exc)}
    except NodalabError as exc:
        log.error("%s: %s", path, exc)
        return EXIT_AUDIT, {**entry, "status": "error", "error": str(exc)}
    hashes = write_outputs(out_dir, res)
    for w in res.warnings:
        log.warning("%s: %s", scn.name, w)
    for f in res.failures:
        log.error("%s: %s", scn.name, f)
    failed = bool(res.failures) or (strict and bool(res.warnings))
    status = "failed" if failed else "ok"
    entry.update(status=status, outputs=hashes, failures=res.failures, warnings=res.warnings,
                 wall_time=time.perf_counter() - t0, out_dir=str(out_dir))
    return (EXIT_AUDIT if failed else EXIT_OK), entry


def run_module(module: str, scenarios: list, out: str, threads: int, seed, strict: bool) -> int:
    out_root = Path(out)
    out_root.mkdir(parents=True, exist_ok=True)
    batch = len(scenarios) > 1
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futs = [pool.submit(_run_one, s, module, out_root, seed, strict, batch) for s in scenarios]
        results = [f.result() for f in futs]
    code = max(c for c, _ in results)
    manifest = {"command": module, "threads": threads, "seed_override": seed, "strict": strict,
                "versions": versions(), "runs": [e for _, e in results], "wall_time": time.perf_counter() - t0,
                "exit_code": code}
    write_json(out_root / "manifest.json", manifest)
    return code


def run_all(out: str, threads: int, strict: bool, determinism: bool) -> int:
    from .acceptance import run_acceptance
    out_root = Path(out)
    report = run_acceptance(threads=threads, determinism=determinism, out=out_root, echo=print)
    failed = not report.all_passed or (strict and report.any_warnings)
    write_json(out_root / "manifest.json", {"command": "all", "threads": threads, "versions": versions(),
                                            "wall_time": report.wall_time, "hashes": report.hashes,
                                            "exit_code": EXIT_AUDIT if failed else EXIT_OK})
    return EXIT_AUDIT if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nodalab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"nodalab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in MODULES + ("all",):
        p = sub.add_parser(name, help="acceptance suite" if name == "all" else f"run {name} scenarios")
        if name != "all":
            p.add_argument("--scenario", action="append", required=True, metavar="PATH",
                           help="scenario JSON file (repeatable; each gets its own subdirectory)")
        else:
            p.add_argument("--no-determinism", action="store_true",
                           help="skip the repeated runs of the determinism criterion")
        p.add_argument("--out", required=True, metavar="DIR", help="output directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, metavar="N")
        p.add_argument("--seed", type=int, default=None, metavar="S", help="override the scenario seed")
        p.add_argument("--strict", action="store_true", help="treat audit warnings as failures")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_SCHEMA
    if args.command == "all":
        return run_all(args.out, args.threads, args.strict, not args.no_determinism)
    return run_module(args.command, args.scenario, args.out, args.threads, args.seed, args.strict)


if __name__ == "__main__":
    sys.exit(main())
