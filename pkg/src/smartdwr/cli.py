"""Command line: ``smartdwr run|sweep|check``.

Exit codes: 0 success, 1 failed ``check``, 2 configuration error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

from .driver import MODE_CONSTANTS, LevelRecord, RunConfig, run_adaptive
from .mesh import Mesh, MeshError
from .report import (ConfigError, build_manifest, check_csv, emit_csv, load_config,
                     manifest_path)
from .solvers import SolverError
from .space import SpaceError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("smartdwr")


def _default_csv(config_path: Path) -> Path:
    return config_path.with_suffix(".csv")


def execute(config: RunConfig, csv_path: Path, mesh_dump_every: int = 0, quiet: bool = False) -> list[LevelRecord]:
    """Run one adaptive computation and write CSV, manifest and mesh dumps."""
    stem = csv_path.name[:-4] if csv_path.name.endswith(".csv") else csv_path.name

    def on_level(rec: LevelRecord, mesh: Mesh) -> None:
        if not quiet:
            print(f"level {rec.level:3d}  dofs {rec.dofs_primal:8d}  eta {rec.parts.total: .3e}  "
                  f"error {rec.error: .3e}  z {rec.z_solves_cum}  u {rec.u_solves_cum}", flush=True)
        if mesh_dump_every and rec.level % mesh_dump_every == 0:
            path = csv_path.with_name(f"{stem}.level{rec.level:03d}.mesh")
            path.write_text(mesh.dump(), encoding="utf-8")

    records = run_adaptive(config, on_level)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    emit_csv(records, csv_path)
    manifest_path(csv_path).write_text(build_manifest(config, records, csv_path).to_json(), encoding="utf-8")
    if not quiet:
        print(f"{len(records)} levels ({records[-1].stop_reason}); wrote {csv_path}")
    return records


def _resolve_output(args, parsed, config_path: Path) -> tuple[Path, int]:
    if args.output:
        csv_path = Path(args.output)
    elif parsed.output.csv:
        csv_path = Path(parsed.output.csv)
        if not csv_path.is_absolute():
            csv_path = config_path.parent / csv_path
    else:
        csv_path = _default_csv(config_path)
    every = args.mesh_dump_every if args.mesh_dump_every is not None else parsed.output.mesh_dump_every
    if every < 0:
        raise ConfigError("--mesh-dump-every must be nonnegative")
    return csv_path, every


def _cmd_run(args) -> int:
    path = Path(args.config)
    parsed = load_config(path)
    csv_path, every = _resolve_output(args, parsed, path)
    execute(parsed.run, csv_path, every, args.quiet)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    path = Path(args.config)
    parsed = load_config(path)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODE_CONSTANTS]
    if not modes or bad:
        raise ConfigError(f"unknown modes: {', '.join(bad) or '(none given)'}")
    csv_path, every = _resolve_output(args, parsed, path)
    stem = csv_path.name[:-4] if csv_path.name.endswith(".csv") else csv_path.name
    for mode in modes:
        c = MODE_CONSTANTS[mode]
        cfg = dataclasses.replace(parsed.run, mode=mode, c_u=c, c_z=c)
        if not args.quiet:
            print(f"== mode {mode}")
        execute(cfg, csv_path.with_name(f"{stem}.{mode}.csv"), every, args.quiet)
    return EXIT_OK


def _cmd_check(args) -> int:
    try:
        problems = check_csv(args.csv)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read {args.csv}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} problem(s) in {args.csv}")
        return EXIT_CHECK
    print(f"{args.csv}: all invariants hold")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smartdwr", description="Goal-oriented adaptive FEM with selective enriched solves.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-level progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="INI config file")
        p.add_argument("-o", "--output", help="CSV path (default: next to the config)")
        p.add_argument("--mesh-dump-every", type=int, default=None, metavar="N",
                       help="write the mesh of every N-th level")
        p.add_argument("-q", "--quiet", action="store_true")

    common(sub.add_parser("run", help="run one adaptive computation"))
    sw = sub.add_parser("sweep", help="run the same config in several modes")
    common(sw)
    sw.add_argument("--modes", default="new,full,int", help="comma-separated subset of new,full,int")
    ck = sub.add_parser("check", help="re-validate a stored CSV")
    ck.add_argument("csv")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "check": _cmd_check}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, SpaceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
