"""Exception types shared across the simulator."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration value or cross-field violation."""


class ParseError(ConfigError):
    """Malformed input file (trace/capability/report); message carries the line number."""


class SimulationError(RuntimeError):
    """Raised when a run cannot continue (e.g. trace horizon exhausted)."""
