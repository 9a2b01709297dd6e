"""Per-edge ranging-error correction from sliding windows.

A corrector consumes the last ``n_steps`` frames of (measured range,
heading of agent i, heading of agent j) for one edge and predicts the
current ranging error; the corrected range is measured minus predicted.
The estimator is a ridge regression on per-frame features
(1, range, sin/cos of each heading), which exactly spans the
deterministic bias family the simulator can inject, so recovery is
testable analytically. Models are trained separately per edge and
serialized as JSON.
"""

from __future__ import annotations

import bisect
import json
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from relloc.geometry import AgentId, canonical_edge
from relloc.measurements import Edge, UwbRange

FEATURE_MAP_NAME = "window_affine_range_heading_harmonic"
FEATURES_PER_FRAME = 6


@dataclass(frozen=True)
class CorrectorWindow:
    """Exactly n_steps frames of (range, theta_i, theta_j), oldest first."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != 3:
            raise ValueError(f"window rows must be (n_steps, 3), got {rows.shape}")
        if rows.shape[0] < 1:
            raise ValueError("window must contain at least one frame")
        if np.any(rows[:, 0] < 0):
            raise ValueError("window ranges must be nonnegative")
        object.__setattr__(self, "rows", rows)

    @property
    def n_steps(self) -> int:
        return self.rows.shape[0]

    @property
    def last_range(self) -> float:
        return float(self.rows[-1, 0])


def window_features(window: CorrectorWindow) -> np.ndarray:
    """Flattened per-frame features (1, r, sin ti, cos ti, sin tj, cos tj)."""
    r = window.rows
    feats = np.empty((r.shape[0], FEATURES_PER_FRAME))
    feats[:, 0] = 1.0
    feats[:, 1] = r[:, 0]
    feats[:, 2] = np.sin(r[:, 1])
    feats[:, 3] = np.cos(r[:, 1])
    feats[:, 4] = np.sin(r[:, 2])
    feats[:, 5] = np.cos(r[:, 2])
    return feats.reshape(-1)


@dataclass(frozen=True)
class CorrectorModel:
    """Linear window regressor bound to a single edge."""

    edge: Edge
    n_steps: int
    coefficients: np.ndarray
    ridge_lambda: float
    training_mse: float
    feature_map: str = FEATURE_MAP_NAME

    def __post_init__(self) -> None:
        coef = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        expected = FEATURES_PER_FRAME * self.n_steps
        if coef.shape[0] != expected:
            raise ValueError(f"expected {expected} coefficients, got {coef.shape[0]}")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "edge", canonical_edge(*self.edge))

    def to_dict(self) -> dict:
        return {
            "edge": list(self.edge),
            "n_steps": self.n_steps,
            "feature_map": self.feature_map,
            "coefficients": self.coefficients.tolist(),
            "ridge_lambda": self.ridge_lambda,
            "training_mse": self.training_mse,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectorModel":
        return cls(
            edge=tuple(d["edge"]),
            n_steps=int(d["n_steps"]),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            ridge_lambda=float(d["ridge_lambda"]),
            training_mse=float(d["training_mse"]),
            feature_map=d.get("feature_map", FEATURE_MAP_NAME),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CorrectorModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict_error(model: CorrectorModel, window: CorrectorWindow) -> float:
    """Predicted ranging error (meters) for the window's final frame."""
    if window.n_steps != model.n_steps:
        raise ValueError(
            f"window has {window.n_steps} frames, model expects {model.n_steps}"
        )
    return float(model.coefficients @ window_features(window))


def correct_range(model: CorrectorModel, window: CorrectorWindow) -> float:
    """Measured range minus predicted error, clamped at zero."""
    return max(0.0, window.last_range - predict_error(model, window))


def fit_corrector(
    samples: Sequence[tuple[CorrectorWindow, float]],
    edge: Edge,
    n_steps: int,
    ridge_lambda: float = 0.0,
) -> CorrectorModel:
    """Ridge least-squares fit of true error on window features.

    ``samples`` pairs each window with the true error (measured minus
    ground-truth range) at its last frame. With ridge_lambda = 0 the
    minimum-norm least-squares solution is used, which tolerates the
    collinear per-frame intercept columns.
    """
    if not samples:
        raise ValueError("training set is empty")
    p = FEATURES_PER_FRAME * n_steps
    if len(samples) < 10 * p:
        warnings.warn(
            f"only {len(samples)} samples for {p} features; "
            f"recommend at least {10 * p}"
        )
    feats = np.empty((len(samples), p))
    targets = np.empty(len(samples))
    for row, (window, err) in enumerate(samples):
        if window.n_steps != n_steps:
            raise ValueError(f"sample window has {window.n_steps} frames, expected {n_steps}")
        feats[row] = window_features(window)
        targets[row] = err
    if ridge_lambda > 0:
        design = np.vstack([feats, math.sqrt(ridge_lambda) * np.eye(p)])
        rhs = np.concatenate([targets, np.zeros(p)])
    else:
        design, rhs = feats, targets
    coef, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    resid = feats @ coef - targets
    mse = float(resid @ resid / len(samples))
    return CorrectorModel(
        edge=edge,
        n_steps=n_steps,
        coefficients=coef,
        ridge_lambda=ridge_lambda,
        training_mse=mse,
    )


def windows_from_series(rows: np.ndarray, n_steps: int) -> list[CorrectorWindow]:
    """Sliding windows over a (T, 3) series, one per frame.

    Frames before the n_steps-th have their missing history padded by
    repeating the first frame, so a corrected stream starts at t = 0.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ValueError(f"series must be (T, 3), got {rows.shape}")
    out = []
    for k in range(rows.shape[0]):
        start = k - n_steps + 1
        if start >= 0:
            w = rows[start : k + 1]
        else:
            pad = np.repeat(rows[:1], -start, axis=0)
            w = np.vstack([pad, rows[: k + 1]])
        out.append(CorrectorWindow(rows=w))
    return out


def build_training_set(
    rows: np.ndarray, true_ranges: np.ndarray, n_steps: int
) -> list[tuple[CorrectorWindow, float]]:
    """Pair sliding windows with true errors (measured - ground truth)."""
    true_ranges = np.asarray(true_ranges, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    if true_ranges.shape[0] != rows.shape[0]:
        raise ValueError("true_ranges length must match series length")
    windows = windows_from_series(rows, n_steps)
    return [(w, float(rows[k, 0] - true_ranges[k])) for k, w in enumerate(windows)]


class HeadingTracker:
    """Latest-heading lookup per agent from (t, theta) samples."""

    def __init__(self, samples: Mapping[AgentId, Sequence[tuple[float, float]]]):
        self._times: dict[AgentId, list[float]] = {}
        self._thetas: dict[AgentId, list[float]] = {}
        for agent, series in samples.items():
            pairs = sorted(series)
            self._times[agent] = [t for t, _ in pairs]
            self._thetas[agent] = [th for _, th in pairs]

    def heading_at(self, agent: AgentId, t: float) -> float:
        times = self._times.get(agent)
        if not times:
            raise KeyError(f"no heading samples for agent {agent}")
        k = bisect.bisect_right(times, t) - 1
        if k < 0:
            raise ValueError(f"no heading sample at or before t={t} for agent {agent}")
        return self._thetas[agent][k]


def apply_corrector_stream(
    models: Mapping[Edge, CorrectorModel],
    ranges: Sequence[UwbRange],
    headings: HeadingTracker,
) -> list[UwbRange]:
    """Correct a range stream in order, one rolling window per edge.

    Edges without a model pass through unchanged. Stream length and
    ordering are preserved.
    """
    models = {canonical_edge(*e): m for e, m in models.items()}
    buffers: dict[Edge, np.ndarray] = {}
    out = []
    for rec in ranges:
        edge = canonical_edge(*rec.edge)
        model = models.get(edge)
        if model is None:
            out.append(rec)
            continue
        frame = np.array(
            [
                rec.distance,
                headings.heading_at(edge[0], rec.t),
                headings.heading_at(edge[1], rec.t),
            ]
        )
        buf = buffers.get(edge)
        if buf is None:
            buf = np.repeat(frame[None, :], model.n_steps, axis=0)
        else:
            buf = np.vstack([buf[1:], frame[None, :]])
        buffers[edge] = buf
        corrected = correct_range(model, CorrectorWindow(rows=buf))
        out.append(UwbRange(edge=edge, distance=corrected, t=rec.t))
    return out
