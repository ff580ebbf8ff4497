"""Exception hierarchy shared across the toolkit.

Every error carries an ``exit_code`` used by the CLI: 2 for failures of
input validation (malformed files, bad schemas, impossible configs), 3 for
failures that surface while computing on otherwise well-formed data.
"""


class Corr3dError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class FormatError(Corr3dError):
    """Malformed binary tensor file.

    ``offset`` is the byte offset of the first violation when known.
    """

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(Corr3dError):
    """A JSON document does not match its declared schema."""

    exit_code = 2


class ValidationError(Corr3dError):
    """A scene violates a structural invariant.

    Raised by loading paths; carries the individual issues so callers can
    report each offending frame and field.
    """

    exit_code = 2

    def __init__(self, message, issues=None):
        super().__init__(message)
        self.issues = list(issues) if issues else []


class ShapeError(Corr3dError):
    """Array dimensions are inconsistent with the requested operation."""

    exit_code = 2


class ConfigError(Corr3dError):
    """A configuration value is out of its legal range."""

    exit_code = 2


class SpecError(Corr3dError):
    """A synthetic-scene request is infeasible as specified."""

    exit_code = 2


class TooFewSamplesError(Corr3dError):
    """Quartile analysis needs at least four samples."""

    exit_code = 2


class EmptySceneError(Corr3dError):
    """No valid cells anywhere in the scene."""


class NoNegativesError(Corr3dError):
    """Negative pairs require at least two occupied voxels."""


class EmptyPairsError(Corr3dError):
    """A score was requested over an empty pair set."""


class EmptyMaskError(Corr3dError):
    """A masked reduction has zero selected cells."""


class DegenerateVectorError(Corr3dError):
    """Cosine similarity is undefined for near-zero vectors."""


class DivergenceError(Corr3dError):
    """Training produced a non-finite loss."""

    def __init__(self, step, value=None):
        msg = f"non-finite loss at step {step}"
        if value is not None:
            msg += f" (value {value!r})"
        super().__init__(msg)
        self.step = step
