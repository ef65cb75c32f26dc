"""Command line entry point: ``spatialground {parse,ground,bench,render-density}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bench import export_report, run_bench
from .config import ConfigError, PipelineConfig, load_config
from .field import FieldError, write_density_csv, write_slice_pgm
from .parser import ParseError, clause_to_canonical_string, parse
from .pipeline import FailedOutcome, WhereOutcome, default_provider, ground
from .scene import ObserverPose, SceneError, load_observer, load_scene

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("spatialground")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="FILE", default=default, help="pipeline configuration (JSON)")
    parser.add_argument("--seed", type=int, metavar="N", default=default, help="override every seed in the config")
    parser.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="debug logging on stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spatialground", description="Ground metric-semantic spatial queries in 3D scenes.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("parse", help="print the canonical clauses of a query")
    _global_flags(p, suppress=True)
    p.add_argument("text")
    p.add_argument("--json", action="store_true", help="JSON output")

    def scene_flags(sp):
        sp.add_argument("--scene", required=True, metavar="FILE")
        sp.add_argument("--query", required=True, metavar="TEXT")
        sp.add_argument("--observer", metavar="X,Y,Z[,YAW[,PITCH]]",
                        help="observer pose (radians); defaults to the scene file's observer")

    g = sub.add_parser("ground", help="ground a query in a scene")
    _global_flags(g, suppress=True)
    scene_flags(g)
    g.add_argument("--emit-path", metavar="FILE", help="plan from the observer and write the path as JSON")
    g.add_argument("--emit-density", metavar="FILE", help="write the goal density as CSV")
    g.add_argument("--json", action="store_true", help="JSON output")

    b = sub.add_parser("bench", help="run the benchmark harness over a JSONL dataset")
    _global_flags(b, suppress=True)
    b.add_argument("--dataset", required=True, metavar="FILE")
    b.add_argument("--out", required=True, metavar="FILE")
    b.add_argument("--format", choices=("json", "csv"), default="json")
    b.add_argument("--top2", action="store_true", help="count a Top-2 label match as a correct selection")
    b.add_argument("--workers", type=int, default=1, metavar="N")

    r = sub.add_parser("render-density", help="write one horizontal density slice as a PGM image")
    _global_flags(r, suppress=True)
    scene_flags(r)
    r.add_argument("--slice-z", type=int, required=True, metavar="K")
    r.add_argument("--out", required=True, metavar="FILE")
    return ap


def _load_config(args) -> PipelineConfig:
    try:
        config = load_config(args.config) if args.config else PipelineConfig()
    except (OSError, ConfigError) as exc:
        raise CliError(f"config: {exc}") from None
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _parse_observer(text: str) -> ObserverPose:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"--observer: expected comma-separated numbers, got {text!r}", EXIT_USAGE) from None
    if len(values) not in (3, 4, 5):
        raise CliError("--observer takes X,Y,Z[,YAW[,PITCH]]", EXIT_USAGE)
    values += [0.0] * (5 - len(values))
    try:
        return ObserverPose(values[:3], values[3], values[4])
    except ValueError as exc:
        raise CliError(f"--observer: {exc}", EXIT_USAGE) from None


def _load_scene(args):
    path = Path(args.scene)
    try:
        graph, grid = load_scene(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, SceneError) as exc:
        raise CliError(f"scene: {exc}") from None
    if args.observer:
        observer = _parse_observer(args.observer)
    elif "observer" in raw:
        try:
            observer = load_observer(raw["observer"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"scene observer: {exc}") from None
    else:
        raise CliError("no observer: pass --observer or add an 'observer' entry to the scene file", EXIT_USAGE)
    return graph, grid, observer


def _run_ground(args, config: PipelineConfig):
    graph, grid, observer = _load_scene(args)
    try:
        provider = default_provider(config)
    except (OSError, ValueError) as exc:
        raise CliError(f"similarity table: {exc}") from None
    outcome = ground(args.query, graph, grid, observer, config, provider)
    if isinstance(outcome, FailedOutcome):
        code = EXIT_USAGE if outcome.stage == "parse" else EXIT_RUNTIME
        raise CliError(f"grounding failed at {outcome.stage}: {outcome.reason}", code)
    return outcome


def cmd_parse(args) -> int:
    try:
        query = parse(args.text)
    except ParseError as exc:
        raise CliError(f"parse error: {exc}", EXIT_USAGE) from None
    clauses = [clause_to_canonical_string(c) for c in query.clauses]
    if args.json:
        print(json.dumps({"kind": query.kind.value, "clauses": clauses}))
    else:
        for line in clauses:
            print(line)
    return EXIT_OK


def _print_outcome(outcome) -> None:
    if isinstance(outcome, WhereOutcome):
        x, y, z = outcome.goal.point
        print(f"goal {x:.3f} {y:.3f} {z:.3f} p={outcome.goal.weight:.6g}")
        if outcome.angles is not None:
            print(f"offset yaw={outcome.angles.yaw:.2f} pitch={outcome.angles.pitch:.2f}")
        for alt in outcome.alternatives:
            ax, ay, az = alt.point
            print(f"alternative {ax:.3f} {ay:.3f} {az:.3f} p={alt.weight:.6g}")
        if outcome.path is not None:
            print(f"path {len(outcome.path.waypoints)} waypoints, length {outcome.path.total_length:.3f}")
    else:
        for node_id, score in outcome.ranked:
            print(f"{node_id} {score:.6f}")


def cmd_ground(args, config: PipelineConfig) -> int:
    if args.emit_path:
        config = replace(config, plan_path=True)
    outcome = _run_ground(args, config)
    if args.emit_path:
        if outcome.path is None:
            raise CliError("--emit-path needs a where-query")
        Path(args.emit_path).write_text(json.dumps(outcome.path.to_dict()) + "\n", encoding="utf-8")
    if args.emit_density:
        write_density_csv(outcome.ledger.density, args.emit_density)
    if args.json:
        print(json.dumps(outcome.to_dict()))
    else:
        _print_outcome(outcome)
    return EXIT_OK


def cmd_bench(args, config: PipelineConfig) -> int:
    if args.top2:
        config = replace(config, bench=replace(config.bench, top2=True))
    try:
        report = run_bench(args.dataset, config, workers=max(1, args.workers))
    except OSError as exc:
        raise CliError(f"dataset: {exc}") from None
    export_report(report, args.out, args.format)
    for err in report.validation_errors:
        print(f"invalid record (line {err['line']}, id {err['id']}): {err['error']}", file=sys.stderr)
    return EXIT_RUNTIME if report.validation_errors else EXIT_OK


def cmd_render(args, config: PipelineConfig) -> int:
    outcome = _run_ground(args, config)
    try:
        write_slice_pgm(outcome.ledger.density, args.slice_z, args.out)
    except FieldError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        print("spatialground: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "parse":
            return cmd_parse(args)
        config = _load_config(args)
        handler = {"ground": cmd_ground, "bench": cmd_bench, "render-density": cmd_render}[args.command]
        return handler(args, config)
    except CliError as exc:
        print(f"spatialground: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
