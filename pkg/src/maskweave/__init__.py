"""Sibling-network magnitude pruning: overlap statistics and mask composition."""

from .errors import (
    AlignmentError,
    CorruptionError,
    DomainError,
    FormatError,
    MaskweaveError,
    NumericError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "CorruptionError",
    "DomainError",
    "FormatError",
    "MaskweaveError",
    "NumericError",
    "UsageError",
]
