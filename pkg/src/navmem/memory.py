"""Short-term visual graph memory.

An online topological graph whose nodes carry an appearance embedding, the
step of the most recent visit, and a visit count. Each navigation step the
current multi-view observation is aggregated into a single location
embedding, matched against the stored nodes by cosine similarity under an
adaptive threshold, and the graph is updated (momentum-blended revisit or a
fresh node linked to the previous location). Candidate directions are
scored by novelty and visit statistics and the result is rendered into a
compact textual summary for prompt injection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import cosine, normalize

DEFAULT_THRESHOLD_BASE = 0.85
DEFAULT_THRESHOLD_BAND = 0.03
DEFAULT_SPARSE_SIZE = 8
DEFAULT_DENSE_SIZE = 20
DEFAULT_MOMENTUM = 0.15
DEFAULT_NOVELTY_WEIGHT = 1.0
DEFAULT_VISIT_WEIGHT = 0.5

INSTRUCTION_PRIORITY_CLAUSE = (
    "prioritizing unexplored directions without violating the instruction"
)


class DegenerateAggregationError(ValueError):
    """Weighted view sum collapsed to (near) zero; embeddings are corrupt."""


class GraphIntegrityError(RuntimeError):
    """A localization result no longer matches the graph it is applied to."""


@dataclass
class MemoryNode:
    node_id: int
    embedding: np.ndarray  # unit L2 norm
    last_visit_step: int
    visit_count: int


@dataclass
class LocalizationResult:
    """Outcome of matching one observation embedding against the graph.

    ``revisit`` is True iff ``best_similarity >= threshold_used``; for an
    empty graph the similarity is reported as -1.0 (the cosine minimum).
    ``node_id`` is the matched node on a revisit, or the id the new node
    will take on insertion.
    """

    revisit: bool
    node_id: int
    best_similarity: float
    threshold_used: float

    def __post_init__(self):
        if self.revisit != (self.best_similarity >= self.threshold_used):
            raise ValueError("revisit flag inconsistent with similarity/threshold")


class VisualGraph:
    """Online graph memory: ordered nodes, undirected edges, current node."""

    def __init__(self):
        self.nodes: dict[int, MemoryNode] = {}
        self.edges: set[tuple[int, int]] = set()
        self.current_node: int | None = None
        self._next_id = 0
        self._max_step = -1

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def next_node_id(self) -> int:
        return self._next_id

    def embedding_matrix(self) -> tuple[list[int], np.ndarray]:
        """Node ids (insertion order) and their stacked embeddings."""
        ids = list(self.nodes)
        if not ids:
            return ids, np.empty((0, 0))
        return ids, np.stack([self.nodes[i].embedding for i in ids])

    def max_visit_count(self) -> int:
        if not self.nodes:
            return 0
        return max(n.visit_count for n in self.nodes.values())

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        adjacency: dict[int, list[int]] = {i: [] for i in self.nodes}
        for a, b in self.edges:
            adjacency[a].append(b)
            adjacency[b].append(a)
        seen = set()
        stack = [next(iter(self.nodes))]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(adjacency[node])
        return len(seen) == len(self.nodes)


@dataclass(frozen=True)
class AggregationProfile:
    """Which view offsets (relative to the forward direction) are summed,
    and with what weight. Offsets are heading-lattice steps (30 degrees)."""

    weights: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("aggregation profile selects no views")
        if any(w <= 0.0 for _, w in self.weights):
            raise ValueError("aggregation weights must be positive")

    @classmethod
    def forward_biased(cls, forward_weight: float = 2.0, side_weight: float = 1.0):
        return cls(weights=((0, forward_weight), (1, side_weight), (-1, side_weight)))

    @classmethod
    def panorama(cls, forward_weight: float = 2.0, side_weight: float = 1.0):
        offs = [(0, forward_weight)]
        offs += [(o, side_weight) for o in range(1, 6)]
        offs += [(6, side_weight)]
        offs += [(-o, side_weight) for o in range(1, 6)]
        return cls(weights=tuple(offs))


FORWARD_BIASED = AggregationProfile.forward_biased()


def aggregate_views(
    view_embeddings: list[np.ndarray],
    forward_direction: int,
    profile: AggregationProfile = FORWARD_BIASED,
) -> np.ndarray:
    """Weighted sum of the selected views, renormalized.

    The forward view carries the highest weight so the location embedding
    highlights the region the agent is moving toward.
    """
    n = len(view_embeddings)
    if not 0 <= forward_direction < n:
        raise ValueError(f"forward direction {forward_direction} outside 0..{n - 1}")
    total = np.zeros_like(np.asarray(view_embeddings[0], dtype=np.float64))
    for offset, weight in profile.weights:
        total = total + weight * np.asarray(
            view_embeddings[(forward_direction + offset) % n], dtype=np.float64
        )
    norm = float(np.linalg.norm(total))
    if norm < 1e-9:
        raise DegenerateAggregationError(
            "weighted view sum is numerically zero; check the embedding provider"
        )
    return total / norm


def adaptive_threshold(
    graph_size: int,
    base: float = DEFAULT_THRESHOLD_BASE,
    band: float = DEFAULT_THRESHOLD_BAND,
    sparse_size: int = DEFAULT_SPARSE_SIZE,
    dense_size: int = DEFAULT_DENSE_SIZE,
) -> float:
    """Piecewise match threshold: strict while the graph is sparse, the base
    value in the mid range, and relaxed once the graph grows dense."""
    if graph_size < 0:
        raise ValueError("graph size cannot be negative")
    if band < 0:
        raise ValueError("threshold band must be non-negative")
    if graph_size < sparse_size:
        return base + band
    if graph_size <= dense_size:
        return base
    return base - band


def localize(
    embedding: np.ndarray, graph: VisualGraph, threshold: float
) -> LocalizationResult:
    """Match ``embedding`` against every stored node by cosine similarity.

    Returns a revisit of the best node when its similarity clears the
    threshold, otherwise a fresh node id. Ties are broken toward the
    lowest node id so traces replay identically.
    """
    ids, matrix = graph.embedding_matrix()
    if not ids:
        return LocalizationResult(
            revisit=False,
            node_id=graph.next_node_id,
            best_similarity=-1.0,
            threshold_used=threshold,
        )
    sims = matrix @ np.asarray(embedding, dtype=np.float64)
    best_pos = int(np.argmax(sims))  # argmax returns the first (lowest-id) maximum
    best_sim = float(sims[best_pos])
    if best_sim >= threshold:
        return LocalizationResult(
            revisit=True,
            node_id=ids[best_pos],
            best_similarity=best_sim,
            threshold_used=threshold,
        )
    return LocalizationResult(
        revisit=False,
        node_id=graph.next_node_id,
        best_similarity=best_sim,
        threshold_used=threshold,
    )


def update_graph(
    graph: VisualGraph,
    result: LocalizationResult,
    embedding: np.ndarray,
    step: int,
    momentum: float = DEFAULT_MOMENTUM,
) -> VisualGraph:
    """Apply a localization outcome to the graph (in place).

    Revisit: momentum-blend the stored embedding toward the observation,
    bump the visit step and count. New node: insert (embedding, step, 1).
    Either way an undirected edge links the previous current node to the
    new one when they differ.
    """
    if graph.nodes and step <= graph._max_step:
        raise GraphIntegrityError(
            f"step {step} is not beyond the last recorded visit step {graph._max_step}"
        )
    embedding = np.asarray(embedding, dtype=np.float64)
    if result.revisit:
        node = graph.nodes.get(result.node_id)
        if node is None:
            raise GraphIntegrityError(
                f"stale localization: node {result.node_id} is not in the graph"
            )
        node.embedding = normalize(
            (1.0 - momentum) * node.embedding + momentum * embedding
        )
        node.last_visit_step = step
        node.visit_count += 1
        new_current = node.node_id
    else:
        if result.node_id != graph.next_node_id:
            raise GraphIntegrityError(
                f"stale localization: new-node id {result.node_id} does not match "
                f"the next free id {graph.next_node_id}"
            )
        node = MemoryNode(
            node_id=result.node_id,
            embedding=normalize(embedding),
            last_visit_step=step,
            visit_count=1,
        )
        graph.nodes[node.node_id] = node
        graph._next_id += 1
        new_current = node.node_id
    previous = graph.current_node
    if previous is not None and previous != new_current:
        graph.edges.add((min(previous, new_current), max(previous, new_current)))
    graph.current_node = new_current
    graph._max_step = step
    return graph


def novelty(embedding: np.ndarray, graph: VisualGraph) -> float:
    """1 minus the best clamped cosine match against the stored nodes.

    An empty graph is maximally novel (1.0); a perfect match gives 0.0.
    """
    ids, matrix = graph.embedding_matrix()
    if not ids:
        return 1.0
    best = float(np.max(matrix @ np.asarray(embedding, dtype=np.float64)))
    return 1.0 - min(max(best, 0.0), 1.0)


@dataclass
class CandidatePriority:
    candidate_index: int
    novelty: float
    matched_visit_count: int
    score: float
    rank: int = 0


def prioritize_candidates(
    candidates: list[tuple[int, np.ndarray]],
    graph: VisualGraph,
    threshold: float,
    novelty_weight: float = DEFAULT_NOVELTY_WEIGHT,
    visit_weight: float = DEFAULT_VISIT_WEIGHT,
    hard_filter: bool = False,
) -> list[CandidatePriority]:
    """Soft-rank candidate directions by novelty and revisit pressure.

    score = novelty_weight * novelty - visit_weight * normalized_visits,
    where normalized_visits is the matched node's visit count over the
    graph maximum (0 when unmatched or the graph is empty). All candidates
    are returned in rank order; ``hard_filter`` drops candidates whose best
    match clears the threshold, unless that would drop everything.
    """
    ids, matrix = graph.embedding_matrix()
    max_visits = graph.max_visit_count()
    priorities = []
    for index, embedding in candidates:
        if ids:
            sims = matrix @ np.asarray(embedding, dtype=np.float64)
            best_pos = int(np.argmax(sims))
            best_sim = float(sims[best_pos])
            nov = 1.0 - min(max(best_sim, 0.0), 1.0)
            matched = (
                graph.nodes[ids[best_pos]].visit_count if best_sim >= threshold else 0
            )
        else:
            nov = 1.0
            matched = 0
        normalized_visits = matched / max_visits if max_visits else 0.0
        score = novelty_weight * nov - visit_weight * normalized_visits
        priorities.append(
            CandidatePriority(
                candidate_index=index,
                novelty=nov,
                matched_visit_count=matched,
                score=score,
            )
        )
    if hard_filter:
        kept = [p for p in priorities if p.matched_visit_count == 0]
        if kept:  # a hard filter must never strand the agent with zero options
            priorities = kept
    priorities.sort(key=lambda p: (-p.score, p.candidate_index))
    for rank, priority in enumerate(priorities):
        priority.rank = rank
    return priorities


def uniform_priorities(candidate_indices: list[int]) -> list[CandidatePriority]:
    """Equal-score priorities used when the short-term memory is disabled."""
    return [
        CandidatePriority(
            candidate_index=index,
            novelty=1.0,
            matched_visit_count=0,
            score=0.0,
            rank=rank,
        )
        for rank, index in enumerate(candidate_indices)
    ]


def render_short_term_context(
    graph: VisualGraph, priorities: list[CandidatePriority]
) -> str:
    """Deterministic textual summary of the short-term memory state."""
    revisited = [n for n in graph.nodes.values() if n.visit_count > 1]
    revisited.sort(key=lambda n: n.node_id)
    if revisited:
        detail = "; ".join(
            f"node {n.node_id}: {n.visit_count} visits" for n in revisited
        )
        revisit_line = f"- revisited locations: {len(revisited)} ({detail})"
    else:
        revisit_line = "- revisited locations: 0"
    lines = [
        "Short-term memory:",
        f"- explored locations: {graph.node_count}",
        revisit_line,
    ]
    if priorities:
        lines.append("- candidate priorities (best first):")
        for p in sorted(priorities, key=lambda p: p.rank):
            lines.append(
                f"  rank {p.rank}: candidate {p.candidate_index} "
                f"(novelty {p.novelty:.3f}, matched visits {p.matched_visit_count}, "
                f"score {p.score:.3f})"
            )
    else:
        lines.append("- candidate priorities: none")
    lines.append(
        f"Choose the next direction by {INSTRUCTION_PRIORITY_CLAUSE}."
    )
    return "\n".join(lines)
