"""Online rollout pruning for group-relative RL: calibration, survival
sampling, balance checks, weighted voting and a backend simulator."""

from rollprune.calibration import BinnedCalibrator, bin_index, normalize_score
from rollprune.errors import (
    ConfigError,
    DegenerateGroupError,
    DomainError,
    ShortTraceError,
    UndefinedLikelihoodError,
    UnreachableTargetError,
)
from rollprune.model import (
    BalanceStats,
    Rollout,
    RolloutGroup,
    balance_stats,
    draw_label,
    group_advantages,
)
from rollprune.survival import SurvivalPolicy, decide, solve_delta

__version__ = "0.1.0"

__all__ = [
    "BalanceStats",
    "BinnedCalibrator",
    "ConfigError",
    "DegenerateGroupError",
    "DomainError",
    "Rollout",
    "RolloutGroup",
    "ShortTraceError",
    "SurvivalPolicy",
    "UndefinedLikelihoodError",
    "UnreachableTargetError",
    "balance_stats",
    "bin_index",
    "decide",
    "draw_label",
    "group_advantages",
    "normalize_score",
    "solve_delta",
]
