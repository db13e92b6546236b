"""Shared exception hierarchy.

Every error carries the process exit code the CLI maps it to:
1 = analysis failure (a check failed or a local-validity hypothesis broke),
2 = configuration / input-contract error,
3 = runtime numeric error (overflow, NaN, diverging algebraic loop).
"""

from __future__ import annotations


class LacedGamesError(Exception):
    exit_code = 1


class AnalysisError(LacedGamesError):
    """An analysis step failed on valid input (e.g. a hypothesis of the
    reconstruction or decomposition does not hold at the probed point)."""

    exit_code = 1


class ConfigError(LacedGamesError):
    """Bad configuration value, unknown key, or malformed input file."""

    exit_code = 2


class NumericError(LacedGamesError):
    """Non-finite state, diverging fixed point, or evaluation domain error."""

    exit_code = 3
