"""Hierarchical-memory navigation core with a deterministic gridworld
simulator, VLN metrics, and an episode-running CLI."""

from .actions import Action, forward, stop, turn_left, turn_right, waypoint
from .episode import RunConfig, run_episode, run_suite, replay_trace
from .globaler import (
    GlobalState,
    NavigationSchema,
    extract_schema,
    opp,
    render_long_term_context,
    update_global_state,
)
from .memory import (
    AggregationProfile,
    CandidatePriority,
    LocalizationResult,
    MemoryNode,
    VisualGraph,
    adaptive_threshold,
    aggregate_views,
    localize,
    novelty,
    prioritize_candidates,
    render_short_term_context,
    update_graph,
)
from .metrics import (
    EpisodeMetrics,
    Trajectory,
    navigation_error,
    ndtw,
    oracle_success,
    spl,
    success,
)
from .navigator import (
    Decision,
    DecisionContext,
    SidecarClient,
    build_context,
    remote_decide,
    scripted_decide,
)
from .world import (
    AgentPose,
    CandidateWaypoint,
    GridWorld,
    Observation,
    SyntheticEmbeddingProvider,
    candidate_waypoints,
    load_map,
    observe,
    parse_map,
    serialize_map,
    step,
    synth_embedding,
)

__version__ = "0.1.0"
