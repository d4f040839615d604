"""Exception types shared across the pipeline."""

from __future__ import annotations


class LearnPathError(Exception):
    """Base class for all package errors."""


class ConfigError(LearnPathError, ValueError):
    """Bad configuration: missing columns, invalid options."""


class DataError(LearnPathError, ValueError):
    """Input data that cannot be processed (non-finite distances, too few sequences)."""


class ParameterError(LearnPathError, ValueError):
    """Argument out of range or inconsistent with another argument."""
