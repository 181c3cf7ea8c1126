"""Exception types shared across the package."""

from __future__ import annotations


class LexattnError(Exception):
    """Base class for package errors."""


class DataFormatError(LexattnError):
    """Malformed input data: corpus lines, KB lines, config files, checkpoints."""


class NumericError(LexattnError):
    """Numeric failure: non-finite loss or gradient, divergence during training."""


class UsageError(LexattnError):
    """Bad command-line usage."""
