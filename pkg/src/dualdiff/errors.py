"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is out of range, unknown, or inconsistent."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointChecksumError(CheckpointError):
    """Payload bytes do not match the checksum recorded in the manifest."""


class CheckpointTruncatedError(CheckpointError):
    """Payload is shorter than the manifest's tensor index requires."""
