"""Exception types raised across the package."""


class RtlkitError(Exception):
    """Base class for all rtlkit errors."""


class InvalidTransformError(RtlkitError):
    """Transform parameters outside their valid domain (e.g. scale <= 0)."""


class InvalidParameterError(RtlkitError):
    """A numeric parameter violates its precondition."""


class EmptyInputError(RtlkitError):
    """An operation that needs at least one point received an empty cloud."""


class DegenerateMeshError(RtlkitError):
    """Mesh has zero total surface area or an otherwise unusable geometry."""


class DegenerateModelError(RtlkitError):
    """Model geometry cannot support the requested operation (e.g. zero height)."""


class InsufficientCandidatesError(RtlkitError):
    """Fewer candidate points than the requested output count."""


class ParseError(RtlkitError):
    """Malformed file content. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFormatError(ParseError):
    """File is recognizable but uses an unsupported variant (e.g. big-endian PLY)."""


class ShapeError(RtlkitError):
    """Array shapes are incompatible for an operation. Names the op and dims."""


class ConfigError(RtlkitError):
    """Invalid configuration value. Message names the offending field path."""


class DatasetError(RtlkitError):
    """Dataset/manifest contents cannot support the requested operation."""


class PlacementError(RtlkitError):
    """A model footprint does not fit inside the target scene box."""


class LabelError(RtlkitError):
    """A label index is outside the class range."""


class CheckpointError(RtlkitError):
    """Checkpoint file is malformed or contradicts the requested configuration."""


class TrainingDivergedError(RtlkitError):
    """Training hit a NaN loss or gradient and was aborted."""


class EvaluationError(RtlkitError):
    """Evaluation cannot proceed (e.g. a class with zero relevant points)."""
