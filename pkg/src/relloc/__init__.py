"""Relative multi-robot localization toolkit.

Estimates the planar positions of a team of agents from inter-agent
range measurements, per-agent odometry and (optionally) cooperative
object detections, using a sequential Monte Carlo filter over the
stacked team state. Ships a deterministic scenario simulator, a
multilateration baseline, a per-edge ranging-error corrector and
APE/ATE evaluation utilities.
"""

__version__ = "0.1.0"

from relloc.geometry import ArenaBounds, Pose2, RangingGraph, WorldObject, make_graph, true_range

__all__ = [
    "ArenaBounds",
    "Pose2",
    "RangingGraph",
    "WorldObject",
    "make_graph",
    "true_range",
    "__version__",
]
