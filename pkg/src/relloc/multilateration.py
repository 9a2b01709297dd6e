"""Least-squares multilateration baseline.

Solves single positions from distances to known reference points via
Gauss-Newton on the range residuals, and tracks a whole scenario by
solving each moving agent per timestep against the current estimates of
its ranging neighbors. This is the conventional comparator the particle
filter is evaluated against; it has no internal randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from relloc.geometry import AgentId, RangingGraph
from relloc.measurements import UwbRange

_COLLINEARITY_RATIO = 1e-6


class InsufficientReferences(ValueError):
    """Fewer than three reference points: underdetermined in 2D."""


class DegenerateGeometry(ValueError):
    """References are (numerically) collinear; the fix is not unique."""


@dataclass(frozen=True)
class MultilaterationProblem:
    """References with known positions, plus measured distances to each."""

    reference_positions: tuple[tuple[AgentId, tuple[float, float]], ...]
    ranges: tuple[tuple[AgentId, float], ...]
    prior: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        known = {a for a, _ in self.reference_positions}
        for a, _ in self.ranges:
            if a not in known:
                raise ValueError(f"range references agent {a} with no known position")


@dataclass(frozen=True)
class MultilaterationResult:
    position: tuple[float, float]
    residual_rms: float
    converged: bool
    iterations: int


def _check_geometry(refs: np.ndarray) -> None:
    if refs.shape[0] < 3:
        raise InsufficientReferences(
            f"need >= 3 references for a unique 2D fix, got {refs.shape[0]}"
        )
    centered = refs - refs.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] < _COLLINEARITY_RATIO * sv[0]:
        raise DegenerateGeometry("reference points are collinear within tolerance")


def solve_multilateration(
    problem: MultilaterationProblem,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> MultilaterationResult:
    """Gauss-Newton minimization of sum((|x - a_k| - r_k)^2).

    Warm-started from ``problem.prior`` when given, else the reference
    centroid. Converged when the step norm drops below ``tol``; when the
    iteration budget runs out the best iterate is returned with
    ``converged=False`` rather than raising.
    """
    pos_by_agent = {a: np.asarray(p, dtype=float) for a, p in problem.reference_positions}
    refs = np.array([pos_by_agent[a] for a, _ in problem.ranges], dtype=float)
    dists = np.array([r for _, r in problem.ranges], dtype=float)
    _check_geometry(refs)

    x = np.asarray(problem.prior, dtype=float) if problem.prior is not None else refs.mean(axis=0)
    best_x, best_cost = x.copy(), math.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        diff = x - refs
        norms = np.maximum(np.linalg.norm(diff, axis=1), 1e-12)
        resid = norms - dists
        cost = float(resid @ resid)
        if cost < best_cost:
            best_cost, best_x = cost, x.copy()
        jac = diff / norms[:, None]
        delta, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        x = x + delta
        if float(np.linalg.norm(delta)) < tol:
            converged = True
            break

    diff = x - refs
    resid = np.linalg.norm(diff, axis=1) - dists
    cost = float(resid @ resid)
    if cost < best_cost:
        best_cost, best_x = cost, x
    rms = math.sqrt(best_cost / len(dists))
    return MultilaterationResult(
        position=(float(best_x[0]), float(best_x[1])),
        residual_rms=rms,
        converged=converged,
        iterations=iterations,
    )


@dataclass
class TrackerResult:
    """Per-step positions (T, N, 2) with per-agent gap flags (T, N).

    A gap means the agent could not be solved that step (fewer than
    three usable references, or degenerate geometry) and its previous
    value was carried forward.
    """

    times: np.ndarray
    positions: np.ndarray
    gaps: np.ndarray
    notes: dict = field(default_factory=dict)

    def solved_fraction(self, agent: AgentId) -> float:
        return float(1.0 - self.gaps[:, agent].mean())


def run_multilateration_tracker(
    times: Sequence[float],
    ranges_per_step: Sequence[Sequence[UwbRange]],
    graph: RangingGraph,
    static_agent: AgentId,
    static_position: tuple[float, float],
    initial_positions: Sequence[tuple[float, float]],
    tol: float = 1e-10,
    max_iter: int = 50,
) -> TrackerResult:
    """Track all moving agents by per-step multilateration.

    Every step, each moving agent is solved against the previous-step
    estimates of the neighbors it measured a range to this step (the
    static agent is pinned at its known-by-convention position). The
    tracker is warm-started from the known initial configuration, its
    most favorable setting; bootstrap from total ignorance is not
    possible with ranges alone. All agents update simultaneously from
    the previous step, so the output is order-independent and
    deterministic.
    """
    n = graph.n_agents
    if len(initial_positions) != n:
        raise ValueError(f"initial_positions must cover {n} agents")
    t_arr = np.asarray(list(times), dtype=float)
    if len(ranges_per_step) != t_arr.shape[0]:
        raise ValueError("ranges_per_step length must match times")

    current = np.array(initial_positions, dtype=float)
    current[static_agent] = static_position
    positions = np.empty((t_arr.shape[0], n, 2))
    gaps = np.zeros((t_arr.shape[0], n), dtype=bool)

    for k, step_ranges in enumerate(ranges_per_step):
        by_agent: dict[AgentId, list[tuple[AgentId, float]]] = {i: [] for i in range(n)}
        for r in step_ranges:
            i, j = r.edge
            by_agent[i].append((j, r.distance))
            by_agent[j].append((i, r.distance))

        new = current.copy()
        for agent in range(n):
            if agent == static_agent:
                new[agent] = static_position
                continue
            obs = by_agent[agent]
            if len(obs) < 3:
                gaps[k, agent] = True
                continue
            problem = MultilaterationProblem(
                reference_positions=tuple(
                    (j, (float(current[j, 0]), float(current[j, 1]))) for j, _ in obs
                ),
                ranges=tuple(obs),
                prior=(float(current[agent, 0]), float(current[agent, 1])),
            )
            try:
                res = solve_multilateration(problem, tol=tol, max_iter=max_iter)
            except DegenerateGeometry:
                gaps[k, agent] = True
                continue
            new[agent] = res.position
        current = new
        positions[k] = current

    notes = {
        "solver": "gauss_newton",
        "references": "previous-step estimates of ranging neighbors, static agent pinned",
        "warm_start": "known initial configuration, then previous estimate",
        "gap_policy": "carry forward previous value when <3 references or degenerate",
    }
    return TrackerResult(times=t_arr, positions=positions, gaps=gaps, notes=notes)
