"""Synthesis and evaluation of the three measurement streams.

Three sensor channels are modeled: peer-to-peer range measurements with
Gaussian noise and an optional deterministic bias, per-agent odometry
displacement deltas in the common frame, and cooperative detections
where two agents observe the same object and the discrepancy of their
object-position estimates yields a relative-position measurement.

All synthesis functions take an explicit ``numpy.random.Generator``;
identical seed and call order reproduce bit-identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from relloc.geometry import AgentId, Pose2, RangingGraph, WorldObject, canonical_edge, wrap_angle

Edge = tuple[AgentId, AgentId]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseModel:
    """Standard deviations of the three measurement channels.

    The numeric defaults are artifact choices, not values reported by
    any hardware campaign: sigma_uwb 0.1 m, sigma_det 0.05 m. The
    odometry translation noise must stay below sigma_uwb / 10 when a
    scenario declares itself paper-faithful (enforced at config level).
    """

    sigma_uwb: float = 0.1
    sigma_odom_xy: float = 0.005
    sigma_odom_theta: float = 0.002
    sigma_det: float = 0.05
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("sigma_uwb", "sigma_odom_xy", "sigma_odom_theta", "sigma_det"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


def rng_from(noise: NoiseModel) -> np.random.Generator:
    return np.random.default_rng(noise.rng_seed)


@dataclass(frozen=True)
class BiasCoefficients:
    """One edge's ranging-bias shape: affine in distance plus the first
    sine/cosine harmonic of each endpoint heading, all in meters."""

    constant: float = 0.0
    distance_gain: float = 0.0
    sin_i: float = 0.0
    cos_i: float = 0.0
    sin_j: float = 0.0
    cos_j: float = 0.0

    def is_symmetric(self) -> bool:
        return self.sin_i == self.sin_j and self.cos_i == self.cos_j


@dataclass(frozen=True)
class RangingBiasModel:
    """Deterministic per-edge ranging bias b(d, theta_i, theta_j).

    Pure function of distance and the two endpoint headings, clamped to
    [-max_abs, +max_abs]. Edges not listed in ``per_edge`` fall back to
    ``default``. Endpoint headings are taken in canonical (min, max)
    edge order, so the bias never depends on query orientation.
    """

    default: BiasCoefficients = field(default_factory=BiasCoefficients)
    per_edge: Mapping[Edge, BiasCoefficients] = field(default_factory=dict)
    max_abs: float = 1.0

    def __post_init__(self) -> None:
        if self.max_abs <= 0:
            raise ValueError(f"max_abs must be > 0, got {self.max_abs}")
        for edge in self.per_edge:
            if edge != canonical_edge(*edge):
                raise ValueError(f"per_edge key {edge} must be in canonical (min, max) order")

    def coefficients_for(self, edge: Edge) -> BiasCoefficients:
        return self.per_edge.get(canonical_edge(*edge), self.default)

    def bias(self, edge: Edge, distance: float, theta_i: float, theta_j: float) -> float:
        """Bias in meters; theta_i/theta_j are the headings of the canonical
        (low, high) endpoints regardless of how the edge was passed."""
        c = self.coefficients_for(edge)
        b = (
            c.constant
            + c.distance_gain * distance
            + c.sin_i * math.sin(theta_i)
            + c.cos_i * math.cos(theta_i)
            + c.sin_j * math.sin(theta_j)
            + c.cos_j * math.cos(theta_j)
        )
        return min(max(b, -self.max_abs), self.max_abs)


@dataclass(frozen=True)
class UwbRange:
    """One range measurement on a graph edge at time t (distance >= 0)."""

    edge: Edge
    distance: float
    t: float


@dataclass(frozen=True)
class OdometryDelta:
    """Displacement of one agent over (t - dt, t] in the common frame."""

    agent: AgentId
    dx: float
    dy: float
    dtheta: float
    covariance: tuple[tuple[float, float], tuple[float, float]]
    t: float
    dt: float

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")

    def covariance_matrix(self) -> np.ndarray:
        return np.asarray(self.covariance, dtype=float)


@dataclass(frozen=True)
class DetectionConfig:
    """Camera visibility model and the same-object validation gate.

    ``d_det_th`` is the distance threshold (default 0.15 m) that the
    discrepancy of the two object-position estimates must stay below
    for a detection to count as the same object. Camera range and field
    of view are simulator plumbing, not calibrated values.
    """

    d_det_th: float = 0.15
    max_camera_range: float = 6.0
    fov_half_angle: float = 1.0

    def __post_init__(self) -> None:
        for name in ("d_det_th", "max_camera_range", "fov_half_angle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class CooperativeDetection:
    """Cooperative detection record for an agent pair (i, j), i < j.

    ``rp`` is the difference of the two global object-position
    estimates (near zero when both agents saw the same object); the
    same-object gate applies to it. ``offset`` is the informative part:
    the difference of the two agent-local object observations, which
    estimates p_i - p_j and is what the filter consumes. ``sigma`` is
    the per-axis standard deviation of both vectors (sqrt(2) times the
    per-camera sigma, since each vector differences two independent
    observations).
    """

    pair: Edge
    rp: tuple[float, float]
    offset: tuple[float, float]
    sigma: float
    object_id: int
    t: float


def synth_uwb(
    poses: Sequence[Pose2],
    edge: Edge,
    graph: RangingGraph,
    noise: NoiseModel,
    rng: np.random.Generator,
    bias: Optional[RangingBiasModel] = None,
    t: float = 0.0,
) -> UwbRange:
    """Range measurement on ``edge``: true distance plus bias plus Gaussian
    noise, clamped at zero (time-of-flight ranges are nonnegative)."""
    i, j = canonical_edge(*edge)
    if not graph.has_edge(i, j):
        raise KeyError(f"edge ({i}, {j}) is not in the ranging graph")
    d = math.hypot(poses[i].x - poses[j].x, poses[i].y - poses[j].y)
    b = bias.bias((i, j), d, poses[i].theta, poses[j].theta) if bias is not None else 0.0
    eps = rng.normal(0.0, noise.sigma_uwb) if noise.sigma_uwb > 0 else 0.0
    return UwbRange(edge=(i, j), distance=max(0.0, d + b + eps), t=t)


def synth_odometry(
    agent: AgentId,
    pose_prev: Pose2,
    pose_cur: Pose2,
    noise: NoiseModel,
    dt: float,
    rng: np.random.Generator,
    t: float = 0.0,
) -> OdometryDelta:
    """Common-frame displacement delta with per-axis translation noise and
    wrapped heading difference with heading noise."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    dx = pose_cur.x - pose_prev.x
    dy = pose_cur.y - pose_prev.y
    dth = wrap_angle(pose_cur.theta - pose_prev.theta)
    if noise.sigma_odom_xy > 0:
        dx += rng.normal(0.0, noise.sigma_odom_xy)
        dy += rng.normal(0.0, noise.sigma_odom_xy)
    if noise.sigma_odom_theta > 0:
        dth += rng.normal(0.0, noise.sigma_odom_theta)
    var = noise.sigma_odom_xy**2
    return OdometryDelta(
        agent=agent,
        dx=dx,
        dy=dy,
        dtheta=dth,
        covariance=((var, 0.0), (0.0, var)),
        t=t,
        dt=dt,
    )


def visible_objects(pose: Pose2, objects: Sequence[WorldObject], cfg: DetectionConfig) -> list[WorldObject]:
    """Objects within camera range and field of view of ``pose``."""
    out = []
    for obj in objects:
        dx = obj.x - pose.x
        dy = obj.y - pose.y
        dist = math.hypot(dx, dy)
        if dist > cfg.max_camera_range:
            continue
        if dist == 0.0:
            out.append(obj)
            continue
        bearing = wrap_angle(math.atan2(dy, dx) - pose.theta)
        if abs(bearing) <= cfg.fov_half_angle:
            out.append(obj)
    return out


def synth_detection(
    poses: Sequence[Pose2],
    pair: Edge,
    objects: Sequence[WorldObject],
    cfg: DetectionConfig,
    noise: NoiseModel,
    rng: np.random.Generator,
    t: float = 0.0,
) -> Optional[CooperativeDetection]:
    """Cooperative detection for ``pair``, or None when no object qualifies.

    Each agent independently picks its nearest visible object; the
    same-object gate is applied to the noiseless discrepancy of the two
    picks (zero when they picked the same object), so a detection is
    emitted only for picks at most ``d_det_th`` apart. Each agent's
    local object observation is perturbed per axis with sigma_det.
    """
    i, j = canonical_edge(*pair)
    vis_i = visible_objects(poses[i], objects, cfg)
    vis_j = visible_objects(poses[j], objects, cfg)
    if not vis_i or not vis_j:
        return None
    obj_i = min(vis_i, key=lambda o: (math.hypot(o.x - poses[i].x, o.y - poses[i].y), o.id))
    obj_j = min(vis_j, key=lambda o: (math.hypot(o.x - poses[j].x, o.y - poses[j].y), o.id))

    rp_true = (obj_i.x - obj_j.x, obj_i.y - obj_j.y)
    if math.hypot(*rp_true) >= cfg.d_det_th:
        return None

    # Local observations in the common-orientation frame, one noise draw
    # per agent per axis.
    if noise.sigma_det > 0:
        noise_i = rng.normal(0.0, noise.sigma_det, size=2)
        noise_j = rng.normal(0.0, noise.sigma_det, size=2)
    else:
        noise_i = np.zeros(2)
        noise_j = np.zeros(2)
    obs_i = (obj_i.x - poses[i].x + noise_i[0], obj_i.y - poses[i].y + noise_i[1])
    obs_j = (obj_j.x - poses[j].x + noise_j[0], obj_j.y - poses[j].y + noise_j[1])

    # Global object-position estimates and their discrepancy (the gated
    # quantity), plus the agent-offset measurement the filter uses.
    est_i = (poses[i].x + obs_i[0], poses[i].y + obs_i[1])
    est_j = (poses[j].x + obs_j[0], poses[j].y + obs_j[1])
    rp = (est_i[0] - est_j[0], est_i[1] - est_j[1])
    offset = (obs_j[0] - obs_i[0], obs_j[1] - obs_i[1])
    return CooperativeDetection(
        pair=(i, j),
        rp=rp,
        offset=offset,
        sigma=math.sqrt(2.0) * noise.sigma_det,
        object_id=obj_i.id,
        t=t,
    )


def range_loglik(predicted: float, observed: float, sigma: float) -> float:
    """Log-density of ``observed`` under a Gaussian centered at ``predicted``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    z = (observed - predicted) / sigma
    return -0.5 * z * z - math.log(sigma * _SQRT_2PI)
