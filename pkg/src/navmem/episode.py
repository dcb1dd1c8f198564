"""Episode orchestration: configuration, the memory-reasoning-execution
loop, line-delimited trace persistence, replay, and suite running with the
2x2 memory-ablation grid."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .actions import Action, STOP
from .globaler import (
    GlobalState,
    extract_schema_with_fallback,
    render_long_term_context,
    update_global_state,
)
from .mazes import generate_mazes
from .memory import (
    AggregationProfile,
    VisualGraph,
    adaptive_threshold,
    aggregate_views,
    localize,
    prioritize_candidates,
    render_short_term_context,
    uniform_priorities,
    update_graph,
)
from .metrics import (
    EpisodeMetrics,
    Trajectory,
    aggregate_metrics,
    compute_episode_metrics,
    format_report,
)
from .navigator import (
    SidecarClient,
    build_context,
    goal_bearing_hint,
    remote_decide,
    scripted_decide,
)
from .world import (
    EpisodeProtocolError,
    GridWorld,
    SidecarEmbeddingProvider,
    SyntheticEmbeddingProvider,
    candidate_waypoints,
    grid_text,
    load_map,
    observe,
    step as world_step,
)

TRACE_VERSION = "v1"

POLICIES = ("scripted-explorer", "scripted-goal", "remote")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of an episode/suite run; hashed into trace headers."""

    worlds: tuple[str, ...] = ()
    maze_count: int = 0
    maze_rows: int = 11
    maze_cols: int = 11
    seed: int = 0
    policy: str = "scripted-explorer"
    localer: bool = True
    globaler: bool = True
    dim: int = 512
    sigma: float = 0.05
    rho: float = 0.0
    threshold_base: float = 0.85
    threshold_band: float = 0.03
    sparse_size: int = 8
    dense_size: int = 20
    novelty_weight: float = 1.0
    visit_weight: float = 0.5
    hard_filter: bool = False
    momentum: float = 0.15
    aggregation: str = "forward3"  # forward3 | panorama
    forward_weight: float = 2.0
    side_weight: float = 1.0
    success_radius: float = 3.0
    step_cap: int = 50
    waypoint_cap: float = 2.0
    max_candidates: int = 5
    embedding_source: str = "synthetic"  # synthetic | sidecar
    sidecar_url: str = ""
    sidecar_timeout: float = 30.0
    output_dir: str = "runs"
    jobs: int = 1
    failure_threshold: float = 0.5

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.step_cap < 1:
            raise ValueError("step cap must be at least 1")
        if self.dim < 2:
            raise ValueError("embedding dimension must be at least 2")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("correlation rho must be in [0, 1)")
        if self.success_radius < 0.0:
            raise ValueError("success radius cannot be negative")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def aggregation_profile(self) -> AggregationProfile:
        if self.aggregation == "panorama":
            return AggregationProfile.panorama(self.forward_weight, self.side_weight)
        return AggregationProfile.forward_biased(self.forward_weight, self.side_weight)


def episode_seed(config_seed: int, episode_index: int) -> int:
    seq = np.random.SeedSequence([config_seed, episode_index])
    return int(seq.generate_state(1, dtype=np.uint64)[0] & (2**63 - 1))


class Simulation:
    """Stateful stepper enforcing the terminal-stop protocol."""

    def __init__(self, world: GridWorld):
        self.world = world
        self.pose = world.start_pose
        self.terminated = False

    def apply(self, action: Action) -> tuple[float, bool]:
        if self.terminated:
            raise EpisodeProtocolError("action issued after the episode terminated")
        new_pose, distance, blocked = world_step(self.world, self.pose, action)
        self.pose = new_pose
        if action.kind == STOP:
            self.terminated = True
        return distance, blocked


@dataclass
class EpisodeResult:
    header: dict
    records: list[dict]
    footer: dict
    metrics: EpisodeMetrics
    trajectory: Trajectory
    graph: VisualGraph | None
    global_state: GlobalState | None

    def trace_text(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True)]
        lines.extend(json.dumps(r, sort_keys=True) for r in self.records)
        lines.append(json.dumps(self.footer, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.trace_text())
        return p


def _make_provider(config: RunConfig, seed: int, client: SidecarClient | None):
    if config.embedding_source == "sidecar":
        if client is None:
            raise ValueError("sidecar embedding source requires a sidecar client")
        return SidecarEmbeddingProvider(client, dim=config.dim)
    return SyntheticEmbeddingProvider(
        dim=config.dim, noise_sigma=config.sigma, correlation=config.rho, seed=seed
    )


def run_episode(
    config: RunConfig,
    world: GridWorld,
    episode_index: int = 0,
    world_file: str = "",
    client: SidecarClient | None = None,
) -> EpisodeResult:
    """Run one episode: extract the schema once, then loop observe ->
    aggregate -> localize -> update graph -> prioritize candidates ->
    render contexts -> decide -> step -> update global state, until Stop
    or the step cap. Deterministic for the scripted policies."""
    if config.policy == "remote" and client is None and config.sidecar_url:
        client = SidecarClient(config.sidecar_url, timeout=config.sidecar_timeout)
    seed = episode_seed(config.seed, episode_index)
    provider = _make_provider(config, seed, client)
    profile = config.aggregation_profile()

    schema = None
    schema_fallback = None
    global_state = None
    if config.globaler:
        extractor = client.schema if (client is not None and config.policy == "remote") else None
        schema, schema_fallback = extract_schema_with_fallback(
            world.instruction, extractor
        )
        global_state = GlobalState(schema=schema)
    graph = VisualGraph() if config.localer else None

    header = {
        "trace": TRACE_VERSION,
        "config_hash": config.config_hash(),
        "world": world.name,
        "world_file": world_file,
        "world_grid_sha": hashlib.sha256(grid_text(world).encode()).hexdigest()[:16],
        "instruction": world.instruction,
        "schema": schema.to_json() if schema else None,
        "schema_fallback": schema_fallback,
        "episode_seed": seed,
        "start": [world.start_pose.cell[0], world.start_pose.cell[1], world.start_pose.heading],
        "goal": [world.goal_cell[0], world.goal_cell[1]],
    }

    sim = Simulation(world)
    trajectory_points = [world.position(sim.pose.cell)]
    records: list[dict] = []
    tl = 0.0
    stop_reason = "cap"

    for step_index in range(config.step_cap):
        pose = sim.pose
        obs = observe(world, pose, provider)
        record: dict = {"step": step_index}

        theta = adaptive_threshold(
            len(graph) if graph is not None else 0,
            base=config.threshold_base,
            band=config.threshold_band,
            sparse_size=config.sparse_size,
            dense_size=config.dense_size,
        )
        if config.localer:
            aggregated = aggregate_views(obs.view_embeddings, pose.heading, profile)
            loc = localize(aggregated, graph, theta)
            update_graph(graph, loc, aggregated, step_index, momentum=config.momentum)
            record["theta"] = theta
            record["loc"] = {
                "revisit": loc.revisit,
                "node": loc.node_id,
                "similarity": loc.best_similarity,
            }
            record["graph"] = {
                "nodes": graph.node_count,
                "edges": graph.edge_count,
                "current": graph.current_node,
            }

        candidates = candidate_waypoints(
            world, pose, cap_m=config.waypoint_cap, max_candidates=config.max_candidates
        )
        if config.localer:
            indexed = [
                (i, obs.view_embeddings[c.direction_index])
                for i, c in enumerate(candidates)
            ]
            priorities = prioritize_candidates(
                indexed,
                graph,
                theta,
                novelty_weight=config.novelty_weight,
                visit_weight=config.visit_weight,
                hard_filter=config.hard_filter,
            )
        else:
            priorities = uniform_priorities(list(range(len(candidates))))

        short_ctx = render_short_term_context(graph, priorities) if config.localer else ""
        long_ctx = render_long_term_context(global_state) if config.globaler else ""

        scripted = config.policy in ("scripted-explorer", "scripted-goal")
        goal_proximity = None
        if scripted:
            geodesic = world.geodesic_m(pose.cell)
            goal_proximity = 0.0 <= geodesic <= config.success_radius
        context = build_context(
            world.instruction,
            step_index,
            candidates,
            priorities,
            short_ctx,
            long_ctx,
            heading=pose.heading,
            goal_proximity=goal_proximity,
            schema=schema if config.globaler else None,
            came_from=global_state.came_from if config.globaler else None,
        )

        if config.policy == "scripted-goal":
            decision = scripted_decide(context, goal_bearing_hint(world, pose))
        elif config.policy == "scripted-explorer":
            decision = scripted_decide(context)
        else:
            if client is None:
                raise ValueError("remote policy requires a sidecar client or URL")
            decision = remote_decide(context, client)

        distance, blocked = sim.apply(decision.action)
        tl += distance
        if config.globaler:
            update_global_state(
                global_state, decision.action, sim.pose.heading, moved=distance > 0
            )

        record["candidates"] = [c.to_json() for c in candidates]
        record["priorities"] = [
            {
                "candidate": p.candidate_index,
                "novelty": p.novelty,
                "visits": p.matched_visit_count,
                "score": p.score,
                "rank": p.rank,
            }
            for p in priorities
        ]
        record["action"] = decision.action.to_json()
        record["chosen"] = decision.chosen_candidate
        record["blocked"] = blocked
        record["distance"] = distance
        record["pose"] = [sim.pose.cell[0], sim.pose.cell[1], sim.pose.heading]
        record["fallback"] = decision.fallback
        record["retries"] = decision.retries
        if config.globaler:
            record["came_from"] = global_state.came_from
            record["recent_actions"] = [a.describe() for a in global_state.recent_actions]
        records.append(record)

        if sim.pose.cell != pose.cell:
            trajectory_points.append(world.position(sim.pose.cell))
        if sim.terminated:
            stop_reason = "stop"
            break

    trajectory = Trajectory(points=trajectory_points, stopped=sim.terminated)
    metrics = compute_episode_metrics(trajectory, world, tl, radius=config.success_radius)
    footer = {
        "footer": True,
        "steps": len(records),
        "truncated": stop_reason == "cap",
        "stop_reason": stop_reason,
        "metrics": metrics.to_json(),
    }
    return EpisodeResult(
        header=header,
        records=records,
        footer=footer,
        metrics=metrics,
        trajectory=trajectory,
        graph=graph,
        global_state=global_state,
    )


def parse_trace(text: str) -> tuple[dict, list[dict], dict]:
    lines = [line for line in text.split("\n") if line]
    if len(lines) < 2:
        raise ValueError("trace has no header/footer")
    header = json.loads(lines[0])
    if header.get("trace") != TRACE_VERSION:
        raise ValueError(f"unsupported trace version: {header.get('trace')!r}")
    footer = json.loads(lines[-1])
    if not footer.get("footer"):
        raise ValueError("trace footer missing")
    records = [json.loads(line) for line in lines[1:-1]]
    return header, records, footer


def replay_trace(text: str, world: GridWorld) -> list[str]:
    """Re-run a trace's action sequence; returns a list of mismatch
    descriptions (empty when every recorded pose is reproduced)."""
    header, records, _ = parse_trace(text)
    grid_sha = hashlib.sha256(grid_text(world).encode()).hexdigest()[:16]
    if header["world_grid_sha"] != grid_sha:
        return [f"world grid hash mismatch: trace {header['world_grid_sha']}, world {grid_sha}"]
    mismatches = []
    sim = Simulation(world)
    start = header["start"]
    if (world.start_pose.cell[0], world.start_pose.cell[1], world.start_pose.heading) != tuple(start):
        mismatches.append(f"start pose mismatch: {start}")
    for record in records:
        action = Action.from_json(record["action"])
        sim.apply(action)
        got = [sim.pose.cell[0], sim.pose.cell[1], sim.pose.heading]
        if got != record["pose"]:
            mismatches.append(
                f"step {record['step']}: pose {got} != recorded {record['pose']}"
            )
    return mismatches


@dataclass
class SuiteResult:
    rows: list[tuple[str, EpisodeMetrics | None, str | None]]
    trace_paths: list[Path]
    report_text: str
    aggregate: dict[str, float] | None
    out_dir: Path

    @property
    def failure_fraction(self) -> float:
        failed = sum(1 for _, m, _ in self.rows if m is None)
        return failed / len(self.rows) if self.rows else 1.0


def _suite_worlds(config: RunConfig, out_dir: Path) -> list[Path]:
    if config.worlds:
        return [Path(w) for w in config.worlds]
    if config.maze_count > 0:
        return generate_mazes(
            config.maze_count,
            config.maze_rows,
            config.maze_cols,
            config.seed,
            out_dir / "mazes",
        )
    raise ValueError("empty suite: no world files and no maze generator spec")


def _run_one(config_dict: dict, world_file: str, index: int) -> tuple[str, dict, str]:
    """Worker for parallel suites; returns (name, trace payload, error)."""
    config = RunConfig(**config_dict)
    world = load_map(world_file)
    result = run_episode(config, world, episode_index=index, world_file=world_file)
    return world.name, result.trace_text(), ""


def run_suite(config: RunConfig, out_dir=None) -> SuiteResult:
    """Run every episode of the suite, write per-episode traces plus the
    plain-text and JSON reports. Partial failures are recorded per episode
    and the suite continues."""
    out = Path(out_dir) if out_dir is not None else Path(config.output_dir)
    worlds = _suite_worlds(config, out)
    traces_dir = out / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)

    config_dict = asdict(config)
    rows: list[tuple[str, EpisodeMetrics | None, str | None]] = []
    trace_paths: list[Path] = []

    jobs = max(1, config.jobs)
    outputs: list[tuple[str, str, str]] = []
    if jobs == 1 or len(worlds) == 1:
        for i, world_file in enumerate(worlds):
            try:
                outputs.append(_run_one(config_dict, str(world_file), i))
            except Exception as exc:  # recorded, suite continues
                outputs.append((Path(world_file).stem, "", str(exc)))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_one, config_dict, str(world_file), i)
                for i, world_file in enumerate(worlds)
            ]
            for world_file, future in zip(worlds, futures):
                try:
                    outputs.append(future.result())
                except Exception as exc:
                    outputs.append((Path(world_file).stem, "", str(exc)))

    for name, trace_text, error in outputs:
        if error:
            rows.append((name, None, error))
            continue
        path = traces_dir / f"{name}.trace"
        path.write_text(trace_text)
        trace_paths.append(path)
        _, _, footer = parse_trace(trace_text)
        rows.append((name, EpisodeMetrics.from_json(footer["metrics"]), None))

    ok_rows = [(name, m) for name, m, _ in rows if m is not None]
    if ok_rows:
        report_text = format_report(ok_rows)
        aggregate = aggregate_metrics([m for _, m in ok_rows])
    else:
        report_text = "no successful episodes"
        aggregate = None
    (out / "report.txt").write_text(report_text + "\n")
    (out / "report.json").write_text(
        json.dumps(
            {
                "config_hash": config.config_hash(),
                "episodes": [
                    {
                        "episode": name,
                        "metrics": m.to_json() if m else None,
                        "error": err,
                    }
                    for name, m, err in rows
                ],
                "mean": aggregate,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    return SuiteResult(
        rows=rows,
        trace_paths=trace_paths,
        report_text=report_text,
        aggregate=aggregate,
        out_dir=out,
    )


ABLATION_GRID = (
    ("localer1_globaler1", True, True),
    ("localer1_globaler0", True, False),
    ("localer0_globaler1", False, True),
    ("localer0_globaler0", False, False),
)


def run_ablation(config: RunConfig) -> dict[str, SuiteResult]:
    """The 2x2 memory-component grid: same worlds and seeds per cell."""
    out = Path(config.output_dir)
    worlds = tuple(str(p) for p in _suite_worlds(config, out))
    results = {}
    for label, localer_on, globaler_on in ABLATION_GRID:
        cell = replace(config, worlds=worlds, localer=localer_on, globaler=globaler_on)
        results[label] = run_suite(cell, out_dir=out / label)
    return results
