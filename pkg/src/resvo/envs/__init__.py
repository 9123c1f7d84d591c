"""Intertemporal social dilemma environments sharing a reset/step/render interface."""

from __future__ import annotations

import numpy as np

from .base import CLEANUP_PRESETS, KINDS, EnvConfig, EpisodeOver, read_ppm, write_ppm
from .cleanup import Cleanup, CleanupMap, CleanupState, apple_spawn_rate
from .escape_room import EscapeRoom, EscapeRoomState
from .ipd import PAYOFF, IPDState, IteratedPrisonersDilemma

__all__ = [
    "CLEANUP_PRESETS", "KINDS", "PAYOFF", "Cleanup", "CleanupMap", "CleanupState", "EnvConfig",
    "EpisodeOver", "EscapeRoom", "EscapeRoomState", "IPDState", "IteratedPrisonersDilemma",
    "apple_spawn_rate", "make_env", "read_ppm", "write_ppm",
]

_REGISTRY = {"ipd": IteratedPrisonersDilemma, "escape_room": EscapeRoom, "cleanup": Cleanup}


def make_env(config: EnvConfig, rng: np.random.Generator | None = None):
    return _REGISTRY[config.kind](config, rng)
