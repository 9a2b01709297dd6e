"""Sequential Monte Carlo estimator over the stacked team state.

Each particle is one hypothesis of the whole team configuration: a flat
length-2N vector (x_0, y_0, ..., x_{N-1}, y_{N-1}). The filter cycles
predict (shift by odometry deltas plus Gaussian diffusion), update
(Gaussian likelihood of observed ranges and detection offsets, in log
space), resample (systematic, plus a small uniform re-initialization
quota for kidnapped-robot recovery) and estimate (weighted mean).

Likelihoods are accumulated in log space with a max shift before
exponentiation; products over many observation rows underflow in
linear space. Random draws always come from the caller-owned
``numpy.random.Generator``, so fixed seeds reproduce runs bit for bit
regardless of the kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from relloc import kernels
from relloc.geometry import AgentId, ArenaBounds, RangingGraph
from relloc.measurements import CooperativeDetection, Edge, OdometryDelta, UwbRange

_WEIGHT_FLOOR = 1e-300
_INV_WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """M weighted hypotheses of the stacked 2N-dimensional team state.

    Operations never mutate a ParticleSet in place; they return a new
    one with weights normalized to sum to 1.
    """

    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        states = np.ascontiguousarray(self.states, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] % 2 != 0:
            raise ValueError(f"states must be (M, 2N), got {states.shape}")
        if weights.shape != (states.shape[0],):
            raise ValueError(f"weights shape {weights.shape} does not match M={states.shape[0]}")
        if not np.all(np.isfinite(states)):
            raise ValueError("particle states must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def n_agents(self) -> int:
        return self.states.shape[1] // 2

    def agent_block(self, i: AgentId) -> np.ndarray:
        return self.states[:, 2 * i : 2 * i + 2]

    def effective_sample_size(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def weight_entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-np.sum(w * np.log(w)))


@dataclass(frozen=True)
class PredictNoise:
    """Per-agent 2x2 diffusion covariance blocks (block-diagonal overall)."""

    blocks: np.ndarray  # (N, 2, 2)

    def __post_init__(self) -> None:
        blocks = np.asarray(self.blocks, dtype=np.float64)
        if blocks.ndim != 3 or blocks.shape[1:] != (2, 2):
            raise ValueError(f"blocks must be (N, 2, 2), got {blocks.shape}")
        if not np.allclose(blocks, np.swapaxes(blocks, 1, 2)):
            raise ValueError("covariance blocks must be symmetric")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_odometry(
        cls, deltas: Sequence[OdometryDelta], jitter: float = 0.0
    ) -> "PredictNoise":
        """Build diffusion blocks from odometry covariances plus an isotropic
        jitter floor (the floor keeps resampled copies exploring even when
        reported odometry noise is tiny)."""
        blocks = np.stack([d.covariance_matrix() for d in deltas])
        if jitter > 0:
            blocks = blocks + (jitter**2) * np.eye(2)
        return cls(blocks)

    def factors(self) -> np.ndarray:
        """Matrix square roots A with A @ A.T = block, via eigh (handles
        positive semidefinite blocks, including exact zeros)."""
        vals, vecs = np.linalg.eigh(self.blocks)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)[:, None, :]


@dataclass(frozen=True)
class ObservationBatch:
    """One timestep's observations: range rows then detection-offset rows.

    ``detections`` hold the measured agent-offset vectors (estimates of
    p_i - p_j for each pair) with their per-axis sigmas. A batch may be
    empty.
    """

    range_edges: tuple[Edge, ...] = ()
    range_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    range_sigmas: np.ndarray = field(default_factory=lambda: np.empty(0))
    det_pairs: tuple[Edge, ...] = ()
    det_offsets: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    det_sigmas: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        rv = np.asarray(self.range_values, dtype=np.float64)
        rs = np.asarray(self.range_sigmas, dtype=np.float64)
        do = np.asarray(self.det_offsets, dtype=np.float64).reshape(-1, 2)
        ds = np.asarray(self.det_sigmas, dtype=np.float64)
        if not (len(self.range_edges) == rv.shape[0] == rs.shape[0]):
            raise ValueError("range edges/values/sigmas lengths differ")
        if not (len(self.det_pairs) == do.shape[0] == ds.shape[0]):
            raise ValueError("detection pairs/offsets/sigmas lengths differ")
        if np.any(rv < 0):
            raise ValueError("observed ranges must be nonnegative")
        if (rv.size and np.any(rs <= 0)) or (ds.size and np.any(ds <= 0)):
            raise ValueError("observation sigmas must be > 0")
        object.__setattr__(self, "range_values", rv)
        object.__setattr__(self, "range_sigmas", rs)
        object.__setattr__(self, "det_offsets", do)
        object.__setattr__(self, "det_sigmas", ds)

    @property
    def n_rows(self) -> int:
        return len(self.range_edges) + len(self.det_pairs)

    def is_empty(self) -> bool:
        return self.n_rows == 0

    @classmethod
    def from_records(
        cls,
        ranges: Sequence[UwbRange] = (),
        detections: Sequence[CooperativeDetection] = (),
        uwb_sigma: float = 0.1,
        d_det_th: float = 0.15,
        det_sigma_override: Optional[float] = None,
    ) -> "ObservationBatch":
        """Assemble a batch from measurement records.

        Ingestion applies the same-object gate to each detection's
        measured discrepancy vector: records with |rp| >= d_det_th are
        dropped. ``uwb_sigma`` is the filter's range-likelihood width
        (range records carry no sigma of their own).
        """
        kept = [d for d in detections if math.hypot(*d.rp) < d_det_th]
        return cls(
            range_edges=tuple(r.edge for r in ranges),
            range_values=np.array([r.distance for r in ranges], dtype=np.float64),
            range_sigmas=np.full(len(ranges), float(uwb_sigma)),
            det_pairs=tuple(d.pair for d in kept),
            det_offsets=np.array([d.offset for d in kept], dtype=np.float64).reshape(-1, 2),
            det_sigmas=np.array(
                [det_sigma_override if det_sigma_override is not None else d.sigma for d in kept],
                dtype=np.float64,
            ),
        )


@dataclass(frozen=True)
class StateEstimate:
    """Estimated team positions at one timestep, shape (N, 2)."""

    positions: np.ndarray
    t: float

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pos)):
            raise ValueError("estimated positions must be finite")
        object.__setattr__(self, "positions", pos)

    def position_of(self, i: AgentId) -> np.ndarray:
        return self.positions[i]


@dataclass(frozen=True)
class StepDiagnostics:
    ess: float
    weight_entropy: float
    empty_batch: bool = False
    degenerate: bool = False


@dataclass(frozen=True)
class FilterConfig:
    """Tunable filter parameters (artifact defaults, recorded in manifests).

    ``uwb_sigma`` and ``det_sigma_override`` set likelihood widths;
    ``jitter`` is the per-axis diffusion floor added to odometry
    covariances; ``reinit_fraction`` is the uniform re-initialization
    quota applied at every resampling step. ``ess_fraction`` optionally
    gates resampling on effective sample size (None resamples every
    iteration, the literal reading). ``init`` selects uniform-in-bounds
    initialization or a Gaussian around ``init_prior`` positions.
    """

    m_particles: int = 2000
    seed: int = 0
    uwb_sigma: float = 0.1
    det_sigma_override: Optional[float] = None
    jitter: float = 0.03
    reinit_fraction: float = 0.01
    ess_fraction: Optional[float] = None
    init: str = "uniform"
    init_sigma: float = 0.2
    init_prior: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self) -> None:
        if self.m_particles < 1:
            raise ValueError("m_particles must be >= 1")
        if not (0.0 <= self.reinit_fraction <= 1.0):
            raise ValueError("reinit_fraction must be in [0, 1]")
        if self.uwb_sigma <= 0:
            raise ValueError("uwb_sigma must be > 0")
        if self.init not in ("uniform", "gaussian"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init == "gaussian" and self.init_prior is None:
            raise ValueError("gaussian init requires init_prior positions")


# ---------------------------------------------------------------------------
# Filter operations
# ---------------------------------------------------------------------------

def _bounds_lows_highs(bounds: ArenaBounds, n_agents: int) -> tuple[np.ndarray, np.ndarray]:
    lows = np.tile([bounds.x_min, bounds.y_min], n_agents)
    highs = np.tile([bounds.x_max, bounds.y_max], n_agents)
    return lows, highs


def init_particles(
    m: int, n_agents: int, bounds: ArenaBounds, rng: np.random.Generator
) -> ParticleSet:
    """Uniform initialization over the arena bounds, uniform weights 1/M."""
    if m < 1 or n_agents < 1:
        raise ValueError("m and n_agents must be >= 1")
    lows, highs = _bounds_lows_highs(bounds, n_agents)
    states = rng.uniform(lows, highs, size=(m, 2 * n_agents))
    return ParticleSet(states=states, weights=np.full(m, 1.0 / m))


def init_particles_gaussian(
    m: int,
    prior: Sequence[tuple[float, float]],
    sigma: float,
    rng: np.random.Generator,
) -> ParticleSet:
    """Gaussian initialization around known prior positions (legacy option)."""
    mean = np.asarray(prior, dtype=np.float64).reshape(-1)
    states = mean + rng.normal(0.0, sigma, size=(m, mean.shape[0]))
    return ParticleSet(states=states, weights=np.full(m, 1.0 / m))


def predict(
    ps: ParticleSet,
    odom: Mapping[AgentId, OdometryDelta],
    q: PredictNoise,
    rng: np.random.Generator,
) -> ParticleSet:
    """Shift each agent block by its odometry delta and add Gaussian
    diffusion with that agent's covariance block. Weights are unchanged."""
    n = ps.n_agents
    if q.blocks.shape[0] != n:
        raise ValueError(f"PredictNoise has {q.blocks.shape[0]} blocks for {n} agents")
    shift = np.zeros(2 * n)
    for i in range(n):
        if i not in odom:
            raise KeyError(f"missing odometry delta for agent {i}")
        shift[2 * i] = odom[i].dx
        shift[2 * i + 1] = odom[i].dy
    eps = rng.standard_normal(size=(ps.m, 2 * n))
    factors = q.factors()
    noise = np.empty_like(eps)
    for i in range(n):
        noise[:, 2 * i : 2 * i + 2] = eps[:, 2 * i : 2 * i + 2] @ factors[i].T
    return ParticleSet(states=ps.states + shift + noise, weights=ps.weights)


def _batch_index_arrays(batch: ObservationBatch):
    ra = np.array([e[0] for e in batch.range_edges], dtype=np.int64)
    rb = np.array([e[1] for e in batch.range_edges], dtype=np.int64)
    da = np.array([p[0] for p in batch.det_pairs], dtype=np.int64)
    db = np.array([p[1] for p in batch.det_pairs], dtype=np.int64)
    return ra, rb, da, db


def meas_from_states(
    ps: ParticleSet, graph: RangingGraph, batch: ObservationBatch
) -> np.ndarray:
    """Predicted observation vectors, one row set per particle.

    Columns follow the batch layout: one predicted distance per range
    edge, then (dx, dy) of the particle-encoded position difference
    p_i - p_j per detection pair. Range edges must belong to the graph.
    """
    for e in batch.range_edges:
        if not graph.has_edge(*e):
            raise KeyError(f"batch range edge {e} is not in the ranging graph")
    for p in batch.det_pairs:
        if not (0 <= p[0] < ps.n_agents and 0 <= p[1] < ps.n_agents):
            raise IndexError(f"detection pair {p} outside agent range")
    ra, rb, da, db = _batch_index_arrays(batch)
    out = np.empty((ps.m, batch.range_values.shape[0] + 2 * batch.det_offsets.shape[0]))
    if ra.size:
        out[:, : ra.size] = kernels.predicted_ranges(ps.states, ra, rb)
    if da.size:
        offs = kernels.predicted_offsets(ps.states, da, db)
        out[:, ra.size :] = offs.reshape(ps.m, -1)
    return out


def update_weights(
    ps: ParticleSet, batch: ObservationBatch
) -> tuple[ParticleSet, StepDiagnostics]:
    """Multiply weights by the Gaussian likelihood of every batch row.

    Computed in log space with a max shift. An empty batch is a no-op
    flagged in the diagnostics; a fully underflowed posterior resets
    weights to uniform and flags degeneracy instead of propagating NaN.
    """
    if batch.is_empty():
        diag = StepDiagnostics(
            ess=ps.effective_sample_size(),
            weight_entropy=ps.weight_entropy(),
            empty_batch=True,
        )
        return ps, diag

    ra, rb, da, db = _batch_index_arrays(batch)
    loglik = np.zeros(ps.m)
    if ra.size:
        loglik += kernels.loglik_ranges(
            ps.states, ra, rb, batch.range_values, batch.range_sigmas
        )
    if da.size:
        loglik += kernels.loglik_offsets(
            ps.states, da, db, batch.det_offsets, batch.det_sigmas
        )

    total = np.log(np.maximum(ps.weights, _WEIGHT_FLOOR)) + loglik
    peak = float(np.max(total))
    degenerate = not np.isfinite(peak)
    if not degenerate:
        w = np.exp(total - peak)
        s = float(np.sum(w))
        degenerate = s <= 0.0 or not np.isfinite(s)
    if degenerate:
        w = np.full(ps.m, 1.0 / ps.m)
    else:
        w = w / s
    out = ParticleSet(states=ps.states, weights=w)
    diag = StepDiagnostics(
        ess=out.effective_sample_size(),
        weight_entropy=out.weight_entropy(),
        degenerate=degenerate,
    )
    return out, diag


def resample(
    ps: ParticleSet,
    reinit_fraction: float,
    bounds: ArenaBounds,
    rng: np.random.Generator,
) -> ParticleSet:
    """Systematic resampling plus a uniform re-initialization quota.

    All M slots are first filled by systematic resampling proportional
    to weight. Then ceil(reinit_fraction * M) slots, chosen proportional
    to the inverse of the pre-resample weights (floored at 1e-12), are
    re-drawn uniformly from the bounds. Weights reset to 1/M.
    """
    if not (0.0 <= reinit_fraction <= 1.0):
        raise ValueError("reinit_fraction must be in [0, 1]")
    m = ps.m
    u0 = float(rng.random())
    idx = kernels.systematic_indices(ps.weights, u0)
    states = ps.states[idx].copy()
    n_reinit = math.ceil(reinit_fraction * m)
    if n_reinit > 0:
        inv = 1.0 / np.maximum(ps.weights, _INV_WEIGHT_FLOOR)
        slots = rng.choice(m, size=n_reinit, replace=False, p=inv / inv.sum())
        lows, highs = _bounds_lows_highs(bounds, ps.n_agents)
        states[slots] = rng.uniform(lows, highs, size=(n_reinit, 2 * ps.n_agents))
    return ParticleSet(states=states, weights=np.full(m, 1.0 / m))


def estimate_state(ps: ParticleSet, t: float = 0.0) -> StateEstimate:
    """Weight-weighted mean of the particle blocks, per agent."""
    flat = ps.weights @ ps.states
    return StateEstimate(positions=flat.reshape(-1, 2), t=t)


def step(
    ps: ParticleSet,
    odom: Mapping[AgentId, OdometryDelta],
    batch: ObservationBatch,
    graph: RangingGraph,
    bounds: ArenaBounds,
    config: FilterConfig,
    rng: np.random.Generator,
    t: float = 0.0,
) -> tuple[ParticleSet, StateEstimate, StepDiagnostics]:
    """One full filter iteration: predict, update, resample, estimate.

    Resampling runs every iteration with new evidence; an empty batch
    skips both update and resample (no information to select on), so a
    motionless zero-noise step leaves the estimate exactly unchanged.
    When ``ess_fraction`` is set, resampling additionally requires the
    effective sample size to drop below that fraction of M.
    """
    q = PredictNoise.from_odometry(
        [odom[i] for i in range(ps.n_agents)], jitter=config.jitter
    )
    ps = predict(ps, odom, q, rng)
    ps, diag = update_weights(ps, batch)
    if not diag.empty_batch:
        if config.ess_fraction is None or diag.ess < config.ess_fraction * ps.m:
            ps = resample(ps, config.reinit_fraction, bounds, rng)
    est = estimate_state(ps, t=t)
    return ps, est, diag


class ParticleFilter:
    """Stateful wrapper owning the particle set, config and RNG stream."""

    def __init__(
        self,
        graph: RangingGraph,
        bounds: ArenaBounds,
        config: Optional[FilterConfig] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        self.graph = graph
        self.bounds = bounds
        self.config = config or FilterConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        if self.config.init == "gaussian":
            self.particles = init_particles_gaussian(
                self.config.m_particles, self.config.init_prior, self.config.init_sigma, self.rng
            )
        else:
            self.particles = init_particles(
                self.config.m_particles, graph.n_agents, bounds, self.rng
            )

    def step(
        self,
        odom: Mapping[AgentId, OdometryDelta],
        batch: ObservationBatch,
        t: float = 0.0,
    ) -> tuple[StateEstimate, StepDiagnostics]:
        self.particles, est, diag = step(
            self.particles, odom, batch, self.graph, self.bounds, self.config, self.rng, t=t
        )
        return est, diag

    def estimate(self, t: float = 0.0) -> StateEstimate:
        return estimate_state(self.particles, t=t)
