"""Pinching-antenna-assisted federated learning: channel model, round optimiser, simulator."""

from .channel import Placement, SpacingError, gain, gains, rate
from .driver import (InternalAssertionError, ParetoPoint, RoundOutcome, baseline_round,
                     optimize_round, pareto_sweep)
from .scenario import (ConfigError, DeviceProfile, LearnParams, RadioConfig, Scenario,
                       default_template, generate_scenario, load_config)
from .solvers import InfeasibleError

__all__ = [
    "ConfigError", "DeviceProfile", "InfeasibleError", "InternalAssertionError", "LearnParams",
    "ParetoPoint", "Placement", "RadioConfig", "RoundOutcome", "Scenario", "SpacingError",
    "baseline_round", "default_template", "gain", "gains", "generate_scenario", "load_config",
    "optimize_round", "pareto_sweep", "rate",
]
