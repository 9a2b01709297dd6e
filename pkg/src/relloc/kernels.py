"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The filter spends nearly all of its time evaluating per-particle
range/offset log-likelihoods and resampling indices, so those loops are
compiled with numba when available. Set ``RELLOC_BACKEND=numpy`` to
force the vectorized numpy path (or ``RELLOC_BACKEND=numba`` to require
numba and fail loudly if it is missing). Both backends compute the same
quantities; any difference is summation-order rounding at the 1e-15
level.

Kernels are deliberately free of random number generation: all draws
happen in the caller with a ``numpy.random.Generator``, so switching
backends never changes a seeded run's sampling sequence.

``RELLOC_THREADS`` caps the numba threading layer. The shipped kernels
are single-threaded per call (deterministic reduction order), so the
cap only matters for user code that enables parallel kernels.
"""

from __future__ import annotations

import math
import os
import warnings
from types import SimpleNamespace

import numpy as np

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _predicted_ranges_numpy(states: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    """Per-particle predicted distances for each observed edge.

    states: (M, 2N) stacked coordinates, particle k row = (x_0, y_0, ..).
    ia, ib: int64 arrays of edge endpoints. Returns (M, R).
    """
    dx = states[:, 2 * ia] - states[:, 2 * ib]
    dy = states[:, 2 * ia + 1] - states[:, 2 * ib + 1]
    return np.sqrt(dx * dx + dy * dy)


def _predicted_offsets_numpy(states: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    """Per-particle predicted position differences p_a - p_b, shape (M, R, 2)."""
    out = np.empty((states.shape[0], ia.shape[0], 2))
    out[:, :, 0] = states[:, 2 * ia] - states[:, 2 * ib]
    out[:, :, 1] = states[:, 2 * ia + 1] - states[:, 2 * ib + 1]
    return out


def _loglik_ranges_numpy(states, ia, ib, observed, sigmas):
    """Sum of Gaussian log-densities of the observed ranges, per particle."""
    pred = _predicted_ranges_numpy(states, ia, ib)
    z = (pred - observed) / sigmas
    const = float(np.sum(np.log(sigmas * _SQRT_2PI)))
    return -0.5 * np.sum(z * z, axis=1) - const


def _loglik_offsets_numpy(states, ia, ib, observed_xy, sigmas):
    """Per-particle log-density of observed 2D offsets (one sigma per axis)."""
    zx = ((states[:, 2 * ia] - states[:, 2 * ib]) - observed_xy[:, 0]) / sigmas
    zy = ((states[:, 2 * ia + 1] - states[:, 2 * ib + 1]) - observed_xy[:, 1]) / sigmas
    const = 2.0 * float(np.sum(np.log(sigmas * _SQRT_2PI)))
    return -0.5 * (np.sum(zx * zx, axis=1) + np.sum(zy * zy, axis=1)) - const


def _systematic_indices_numpy(weights: np.ndarray, u0: float) -> np.ndarray:
    """Systematic resampling index vector for one uniform draw u0 in [0, 1)."""
    m = weights.shape[0]
    positions = (u0 + np.arange(m)) / m
    cumulative = np.cumsum(weights)
    idx = np.searchsorted(cumulative, positions, side="left")
    return np.minimum(idx, m - 1).astype(np.int64)


_NUMPY_IMPL = SimpleNamespace(
    name="numpy",
    predicted_ranges=_predicted_ranges_numpy,
    predicted_offsets=_predicted_offsets_numpy,
    loglik_ranges=_loglik_ranges_numpy,
    loglik_offsets=_loglik_offsets_numpy,
    systematic_indices=_systematic_indices_numpy,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def predicted_ranges(states, ia, ib):
        m = states.shape[0]
        r = ia.shape[0]
        out = np.empty((m, r))
        for k in range(m):
            for q in range(r):
                dx = states[k, 2 * ia[q]] - states[k, 2 * ib[q]]
                dy = states[k, 2 * ia[q] + 1] - states[k, 2 * ib[q] + 1]
                out[k, q] = math.sqrt(dx * dx + dy * dy)
        return out

    @njit(cache=True)
    def predicted_offsets(states, ia, ib):
        m = states.shape[0]
        r = ia.shape[0]
        out = np.empty((m, r, 2))
        for k in range(m):
            for q in range(r):
                out[k, q, 0] = states[k, 2 * ia[q]] - states[k, 2 * ib[q]]
                out[k, q, 1] = states[k, 2 * ia[q] + 1] - states[k, 2 * ib[q] + 1]
        return out

    @njit(cache=True)
    def loglik_ranges(states, ia, ib, observed, sigmas):
        m = states.shape[0]
        r = ia.shape[0]
        const = 0.0
        for q in range(r):
            const += math.log(sigmas[q] * _SQRT_2PI)
        out = np.empty(m)
        for k in range(m):
            acc = 0.0
            for q in range(r):
                dx = states[k, 2 * ia[q]] - states[k, 2 * ib[q]]
                dy = states[k, 2 * ia[q] + 1] - states[k, 2 * ib[q] + 1]
                d = math.sqrt(dx * dx + dy * dy)
                z = (d - observed[q]) / sigmas[q]
                acc -= 0.5 * z * z
            out[k] = acc - const
        return out

    @njit(cache=True)
    def loglik_offsets(states, ia, ib, observed_xy, sigmas):
        m = states.shape[0]
        r = ia.shape[0]
        const = 0.0
        for q in range(r):
            const += 2.0 * math.log(sigmas[q] * _SQRT_2PI)
        out = np.empty(m)
        for k in range(m):
            acc = 0.0
            for q in range(r):
                zx = ((states[k, 2 * ia[q]] - states[k, 2 * ib[q]]) - observed_xy[q, 0]) / sigmas[q]
                zy = ((states[k, 2 * ia[q] + 1] - states[k, 2 * ib[q] + 1]) - observed_xy[q, 1]) / sigmas[q]
                acc -= 0.5 * (zx * zx + zy * zy)
            out[k] = acc - const
        return out

    @njit(cache=True)
    def systematic_indices(weights, u0):
        m = weights.shape[0]
        cumulative = np.cumsum(weights)
        idx = np.empty(m, dtype=np.int64)
        j = 0
        for k in range(m):
            pos = (u0 + k) / m
            while j < m - 1 and pos > cumulative[j]:
                j += 1
            idx[k] = j
        return idx

    return SimpleNamespace(
        name="numba",
        predicted_ranges=predicted_ranges,
        predicted_offsets=predicted_offsets,
        loglik_ranges=loglik_ranges,
        loglik_offsets=loglik_offsets,
        systematic_indices=systematic_indices,
    )


def _apply_thread_cap() -> None:
    cap = os.environ.get("RELLOC_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        warnings.warn(f"ignoring non-integer RELLOC_THREADS={cap!r}")
        return
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


def _select_backend():
    requested = os.environ.get("RELLOC_BACKEND", "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        warnings.warn(f"unknown RELLOC_BACKEND={requested!r}; using default")
        requested = ""
    if requested == "numpy":
        return _NUMPY_IMPL
    try:
        impl = _build_numba_impl()
        _apply_thread_cap()
        return impl
    except ImportError:
        if requested == "numba":
            raise
        warnings.warn("numba not available; falling back to numpy kernels")
        return _NUMPY_IMPL


_ACTIVE = _select_backend()

predicted_ranges = _ACTIVE.predicted_ranges
predicted_offsets = _ACTIVE.predicted_offsets
loglik_ranges = _ACTIVE.loglik_ranges
loglik_offsets = _ACTIVE.loglik_offsets
systematic_indices = _ACTIVE.systematic_indices


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _ACTIVE.name


def available_backends() -> dict:
    """All importable backends, keyed by name (used by tests and benchmarks)."""
    out = {"numpy": _NUMPY_IMPL}
    try:
        out["numba"] = _ACTIVE if _ACTIVE.name == "numba" else _build_numba_impl()
    except ImportError:
        pass
    return out
