"""Typed errors with the same exit-code split as the scoring toolkit.

Exit 2 means the invocation or its inputs were malformed; exit 3 means a
well-formed extraction failed while running.
"""


class ExtractError(Exception):
    """Base class; subclasses override exit_code where appropriate."""

    exit_code = 3


class InputError(ExtractError):
    """Missing or malformed files in the input directory."""

    exit_code = 2


class ResolutionError(ExtractError):
    """Requested output resolution does not divide the input resolution."""

    exit_code = 2


class RegistryError(ExtractError):
    """Unknown model identifier."""

    exit_code = 2


class ShapeMismatchError(ExtractError):
    """Model produced features whose shape contradicts the declared resolution."""
