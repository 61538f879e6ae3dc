"""Fault-tolerant H-infinity consensus control of leader-follower teams."""

from . import matops, network, plant, robustness, simulate, subspaces, synth_healthy, synth_reconfig
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"

__all__ = [
    "matops", "network", "plant", "robustness", "simulate", "subspaces",
    "synth_healthy", "synth_reconfig",
]
