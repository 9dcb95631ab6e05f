"""Throughput-maximizing transmission schedules for energy-harvesting links."""

from ._version import __version__
from .core import (
    BufferState,
    RateFunction,
    Schedule,
    SlotDecision,
    Trace,
    check_feasibility,
    log_rate,
    natural_log_rate,
    sqrt_rate,
)
from .errors import (
    ConfigError,
    InfeasibleDecisionError,
    InvalidArgumentError,
    NonConvergenceError,
    ResourceCapError,
    UndefinedEfficiencyError,
    UnsupportedPolicyError,
)
from .kernels import BACKEND
from .offline import brute_force_offline, solve_offline
from .online import (
    DpPolicy,
    HeuristicPolicy,
    MeanOfflinePolicy,
    PowerHalvingPolicy,
    dp_solve,
    simulate_policy,
)
from .processes import RngStream, ScenarioModel, paper_scenario, sample_trace

__all__ = [
    "BACKEND",
    "BufferState",
    "ConfigError",
    "DpPolicy",
    "HeuristicPolicy",
    "InfeasibleDecisionError",
    "InvalidArgumentError",
    "MeanOfflinePolicy",
    "NonConvergenceError",
    "PowerHalvingPolicy",
    "RateFunction",
    "ResourceCapError",
    "RngStream",
    "ScenarioModel",
    "Schedule",
    "SlotDecision",
    "Trace",
    "UndefinedEfficiencyError",
    "UnsupportedPolicyError",
    "__version__",
    "brute_force_offline",
    "check_feasibility",
    "dp_solve",
    "log_rate",
    "natural_log_rate",
    "paper_scenario",
    "sample_trace",
    "simulate_policy",
    "solve_offline",
    "sqrt_rate",
]
