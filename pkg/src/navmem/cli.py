"""Command-line interface.

Verbs: ``run`` (single episode), ``suite`` (batch + optional 2x2 memory
ablation), ``gen-mazes``, ``replay`` (trace -> pose check), ``report``
(re-aggregate existing traces). Exit codes: 0 success, 1 usage, 2
world/parse error, 3 suite failure threshold exceeded.

Defaults < config file (``key = value`` lines, keys matching RunConfig
fields) < NAVMEM_SIDECAR_URL environment variable < command-line flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

from .episode import (
    RunConfig,
    parse_trace,
    replay_trace,
    run_ablation,
    run_episode,
    run_suite,
)
from .mazes import generate_mazes
from .metrics import EpisodeMetrics, aggregate_metrics, format_report
from .world import WorldParseError, load_map

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_WORLD = 2
EXIT_SUITE = 3

SIDECAR_ENV_VAR = "NAVMEM_SIDECAR_URL"

_BOOL_FIELDS = {"localer", "globaler", "hard_filter"}
_INT_FIELDS = {
    "maze_count", "maze_rows", "maze_cols", "seed", "dim", "sparse_size",
    "dense_size", "step_cap", "max_candidates", "jobs",
}
_FLOAT_FIELDS = {
    "sigma", "rho", "threshold_base", "threshold_band", "novelty_weight",
    "visit_weight", "momentum", "forward_weight", "side_weight",
    "success_radius", "waypoint_cap", "sidecar_timeout", "failure_threshold",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config_file(path) -> dict:
    """``key = value`` lines; '#' starts a comment; keys match RunConfig."""
    overrides = {}
    known = {f.name for f in dataclass_fields(RunConfig)}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
        if key in _BOOL_FIELDS:
            overrides[key] = _parse_bool(value)
        elif key in _INT_FIELDS:
            overrides[key] = int(value)
        elif key in _FLOAT_FIELDS:
            overrides[key] = float(value)
        elif key == "worlds":
            overrides[key] = tuple(v for v in value.split(",") if v)
        else:
            overrides[key] = value
    return overrides


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="config file (key = value lines)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--policy", choices=("scripted-explorer", "scripted-goal", "remote"))
    parser.add_argument("--localer", dest="localer", action="store_true", default=None)
    parser.add_argument("--no-localer", dest="localer", action="store_false", default=None)
    parser.add_argument("--globaler", dest="globaler", action="store_true", default=None)
    parser.add_argument("--no-globaler", dest="globaler", action="store_false", default=None)
    parser.add_argument("--dim", type=int)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--threshold-base", dest="threshold_base", type=float)
    parser.add_argument("--threshold-band", dest="threshold_band", type=float)
    parser.add_argument("--sparse-size", dest="sparse_size", type=int)
    parser.add_argument("--dense-size", dest="dense_size", type=int)
    parser.add_argument("--novelty-weight", dest="novelty_weight", type=float)
    parser.add_argument("--visit-weight", dest="visit_weight", type=float)
    parser.add_argument("--hard-filter", dest="hard_filter", action="store_true", default=None)
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--aggregation", choices=("forward3", "panorama"))
    parser.add_argument("--forward-weight", dest="forward_weight", type=float)
    parser.add_argument("--side-weight", dest="side_weight", type=float)
    parser.add_argument("--success-radius", dest="success_radius", type=float)
    parser.add_argument("--step-cap", dest="step_cap", type=int)
    parser.add_argument("--waypoint-cap", dest="waypoint_cap", type=float)
    parser.add_argument("--max-candidates", dest="max_candidates", type=int)
    parser.add_argument("--embedding-source", dest="embedding_source", choices=("synthetic", "sidecar"))
    parser.add_argument("--sidecar-url", dest="sidecar_url")
    parser.add_argument("--sidecar-timeout", dest="sidecar_timeout", type=float)
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--failure-threshold", dest="failure_threshold", type=float)


def _build_config(args, extra: dict | None = None) -> RunConfig:
    overrides: dict = {}
    if getattr(args, "config", None):
        overrides.update(parse_config_file(args.config))
    env_url = os.environ.get(SIDECAR_ENV_VAR)
    if env_url:
        overrides["sidecar_url"] = env_url
    known = {f.name for f in dataclass_fields(RunConfig)}
    for key in known:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if extra:
        overrides.update(extra)
    return RunConfig(**overrides)


def _cmd_run(args) -> int:
    config = _build_config(args, extra={"worlds": (args.world,)})
    try:
        world = load_map(args.world)
    except (OSError, WorldParseError) as exc:
        print(f"error: {args.world}: {exc}", file=sys.stderr)
        return EXIT_WORLD
    result = run_episode(config, world, episode_index=args.episode_index, world_file=args.world)
    out = Path(config.output_dir)
    trace_path = result.write(out / "traces" / f"{world.name}.trace")
    print(f"trace: {trace_path}")
    metrics = result.metrics
    print(
        f"steps={result.footer['steps']} stop={result.footer['stop_reason']} "
        f"TL={metrics.tl:.2f} NE={metrics.ne:.2f} nDTW={100 * metrics.ndtw:.2f} "
        f"OSR={100 * metrics.osr:.1f} SR={100 * metrics.sr:.1f} SPL={100 * metrics.spl:.2f}"
    )
    return EXIT_OK


def _cmd_suite(args) -> int:
    extra = {}
    if args.worlds:
        extra["worlds"] = tuple(args.worlds)
    if args.mazes is not None:
        extra["maze_count"] = args.mazes
    config = _build_config(args, extra=extra)
    try:
        if args.ablate:
            results = run_ablation(config)
            for label, suite in results.items():
                print(f"[{label}] report: {suite.out_dir / 'report.txt'}")
                print(suite.report_text)
            worst = max(suite.failure_fraction for suite in results.values())
            return EXIT_SUITE if worst > config.failure_threshold else EXIT_OK
        suite = run_suite(config)
    except WorldParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WORLD
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(suite.report_text)
    print(f"report: {suite.out_dir / 'report.txt'}")
    if suite.failure_fraction > config.failure_threshold:
        print(
            f"error: {suite.failure_fraction:.0%} of episodes failed "
            f"(threshold {config.failure_threshold:.0%})",
            file=sys.stderr,
        )
        return EXIT_SUITE
    return EXIT_OK


def _cmd_gen_mazes(args) -> int:
    try:
        paths = generate_mazes(args.count, args.rows, args.cols, args.seed, args.out)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for path in paths:
        print(path)
    return EXIT_OK


def _resolve_world(trace_path: Path, header: dict):
    world_file = header.get("world_file") or ""
    if not world_file:
        raise WorldParseError("trace header has no world_file to replay against")
    candidate = Path(world_file)
    if not candidate.is_absolute() and not candidate.exists():
        local = trace_path.parent / candidate.name
        if local.exists():
            candidate = local
    return load_map(candidate)


def _cmd_replay(args) -> int:
    failures = 0
    for trace_file in args.traces:
        path = Path(trace_file)
        try:
            text = path.read_text()
            header, _, _ = parse_trace(text)
            world = _resolve_world(path, header)
        except (OSError, ValueError, WorldParseError) as exc:
            print(f"{trace_file}: error: {exc}", file=sys.stderr)
            failures += 1
            continue
        mismatches = replay_trace(text, world)
        if mismatches:
            failures += 1
            for m in mismatches:
                print(f"{trace_file}: {m}", file=sys.stderr)
        else:
            print(f"{trace_file}: ok")
    return EXIT_WORLD if failures else EXIT_OK


def _cmd_report(args) -> int:
    rows = []
    for trace_file in args.traces:
        try:
            header, _, footer = parse_trace(Path(trace_file).read_text())
        except (OSError, ValueError) as exc:
            print(f"{trace_file}: error: {exc}", file=sys.stderr)
            return EXIT_WORLD
        rows.append((header["world"], EpisodeMetrics.from_json(footer["metrics"])))
    if not rows:
        print("error: no traces given", file=sys.stderr)
        return EXIT_USAGE
    text = format_report(rows)
    print(text)
    if args.json:
        payload = {
            "episodes": [
                {"episode": name, "metrics": m.to_json()} for name, m in rows
            ],
            "mean": aggregate_metrics([m for _, m in rows]),
        }
        Path(args.json).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="navmem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single episode")
    p_run.add_argument("world", help="map file")
    p_run.add_argument("--episode-index", type=int, default=0)
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_suite = sub.add_parser("suite", help="run a batch of episodes")
    p_suite.add_argument("worlds", nargs="*", help="map files")
    p_suite.add_argument("--mazes", type=int, help="generate this many mazes instead")
    p_suite.add_argument("--maze-rows", dest="maze_rows", type=int)
    p_suite.add_argument("--maze-cols", dest="maze_cols", type=int)
    p_suite.add_argument("--ablate", action="store_true", help="run the 2x2 memory ablation grid")
    _add_config_flags(p_suite)
    p_suite.set_defaults(func=_cmd_suite)

    p_gen = sub.add_parser("gen-mazes", help="generate maze map files")
    p_gen.add_argument("--count", type=int, required=True)
    p_gen.add_argument("--rows", type=int, default=11)
    p_gen.add_argument("--cols", type=int, default=11)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", default="mazes")
    p_gen.set_defaults(func=_cmd_gen_mazes)

    p_replay = sub.add_parser("replay", help="verify traces reproduce their poses")
    p_replay.add_argument("traces", nargs="+")
    p_replay.set_defaults(func=_cmd_replay)

    p_report = sub.add_parser("report", help="re-aggregate existing traces")
    p_report.add_argument("traces", nargs="+")
    p_report.add_argument("--json", help="also write a JSON report here")
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WorldParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WORLD


if __name__ == "__main__":
    sys.exit(main())
