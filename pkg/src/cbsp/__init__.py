"""Chlorine booster station placement from controllability of water-quality dynamics."""

from .controllability import MetricKind, gramian, kalman_rank, logdet, metric
from .dynamics import BoosterPacing, StateSpace, WQParams, build_state_matrix, simulate, state_space_for_step
from .hydraulics import HydraulicProfile, load_profile, validate_mass_balance
from .network import NetworkTopology, parse_inp, read_inp
from .placement import (
    WEIGHTING_PRESETS,
    PlacementConfig,
    PlacementTimeline,
    backup_replacement,
    compare_strategies,
    partition_solve,
    solve_timeline,
    weigh_sets,
    weigh_sets_by_dimsrs,
)
from .structural import dimsrs, sc

__version__ = "0.1.0"

__all__ = [
    "BoosterPacing",
    "HydraulicProfile",
    "MetricKind",
    "NetworkTopology",
    "PlacementConfig",
    "PlacementTimeline",
    "StateSpace",
    "WEIGHTING_PRESETS",
    "WQParams",
    "backup_replacement",
    "build_state_matrix",
    "compare_strategies",
    "dimsrs",
    "gramian",
    "kalman_rank",
    "load_profile",
    "logdet",
    "metric",
    "parse_inp",
    "partition_solve",
    "read_inp",
    "sc",
    "simulate",
    "solve_timeline",
    "state_space_for_step",
    "validate_mass_balance",
    "weigh_sets",
    "weigh_sets_by_dimsrs",
]
