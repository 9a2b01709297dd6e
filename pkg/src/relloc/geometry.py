"""Shared geometric and graph types.

Positions are planar (meters), headings are radians normalized to
(-pi, pi]. Agents are identified by dense integer indices 0..N-1 so
that team states can be packed as flat length-2N vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

AgentId = int

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = math.pi - (math.pi - theta) % _TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose2:
    """Planar pose of one agent in the common frame.

    ``theta`` is normalized at construction; ``x`` and ``y`` must be
    finite.
    """

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose position must be finite, got ({self.x!r}, {self.y!r})")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


def true_range(a: Pose2, b: Pose2) -> float:
    """Euclidean distance between two agent positions (headings ignored)."""
    return math.hypot(a.x - b.x, a.y - b.y)


def canonical_edge(i: AgentId, j: AgentId) -> tuple[AgentId, AgentId]:
    """Order an unordered agent pair as (min, max). Self-pairs are rejected."""
    if i == j:
        raise ValueError(f"self-loop edge ({i}, {j}) is not allowed")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class RangingGraph:
    """Undirected graph of agents with available ranging edges.

    Edges are stored once in canonical (min, max) order; membership is
    order-insensitive. The graph does not need to be connected.
    """

    n_agents: int
    edges: frozenset[tuple[AgentId, AgentId]] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop edge ({i}, {j}) is not allowed")
            if i > j:
                raise ValueError(f"edge ({i}, {j}) not in canonical order")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise IndexError(
                    f"edge ({i}, {j}) references an agent outside [0, {self.n_agents})"
                )

    def has_edge(self, i: AgentId, j: AgentId) -> bool:
        return canonical_edge(i, j) in self.edges

    def neighbors(self, i: AgentId) -> list[AgentId]:
        out = [b for a, b in self.edges if a == i]
        out += [a for a, b in self.edges if b == i]
        return sorted(out)

    def sorted_edges(self) -> list[tuple[AgentId, AgentId]]:
        return sorted(self.edges)

    def __len__(self) -> int:
        return len(self.edges)


def make_graph(n: int, edge_list) -> RangingGraph:
    """Build a RangingGraph from an iterable of (possibly repeated) pairs.

    Pairs are deduplicated order-insensitively. Raises IndexError for
    out-of-range agent indices and ValueError for self-loops.
    """
    canon = set()
    for i, j in edge_list:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"edge ({i}, {j}) references an agent outside [0, {n})")
        canon.add(canonical_edge(i, j))
    return RangingGraph(n_agents=n, edges=frozenset(canon))


def complete_graph(n: int) -> RangingGraph:
    """All N(N-1)/2 ranging edges."""
    return make_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


@dataclass(frozen=True)
class ArenaBounds:
    """Axis-aligned rectangle the team is known, a priori, to occupy."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate bounds: x [{self.x_min}, {self.x_max}], y [{self.y_min}, {self.y_max}]"
            )

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    @property
    def extent(self) -> tuple[float, float]:
        return (self.x_max - self.x_min, self.y_max - self.y_min)


@dataclass(frozen=True)
class WorldObject:
    """A static landmark that cameras can detect (position in meters)."""

    id: int
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"object {self.id} position must be finite")

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)
