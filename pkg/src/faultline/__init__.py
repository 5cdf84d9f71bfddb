"""Simulator and scheduling-policy library for crash/restart machines sharing a task repository."""

from .core import (
    TIME_TOL,
    AdversarialPattern,
    ConfigError,
    InformResult,
    InvariantViolation,
    Outcome,
    Repository,
    SimulationError,
    Snapshot,
    SystemConfig,
    Task,
    crash,
    format_pattern,
    inject,
    order_simultaneous,
    parse_pattern_text,
    restart,
)
from .engine import Trace, run, validate
from .schedulers import POLICY_IDS, make_policy

__all__ = [
    "TIME_TOL",
    "AdversarialPattern",
    "ConfigError",
    "InformResult",
    "InvariantViolation",
    "Outcome",
    "POLICY_IDS",
    "Repository",
    "SimulationError",
    "Snapshot",
    "SystemConfig",
    "Task",
    "Trace",
    "crash",
    "format_pattern",
    "inject",
    "make_policy",
    "order_simultaneous",
    "parse_pattern_text",
    "restart",
    "run",
    "validate",
]
