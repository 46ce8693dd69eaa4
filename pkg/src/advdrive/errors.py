class AdvDriveError(Exception):
    """Base class for package errors."""


class NumericInputError(AdvDriveError, ValueError):
    """Non-finite number where a finite one is required."""


class NumericError(AdvDriveError, ArithmeticError):
    """A numeric computation (loss, gradient) became non-finite."""


class DegenerateGapError(AdvDriveError, ValueError):
    """Leader gap <= 0: the pair is already in collision."""


class ShapeError(AdvDriveError, ValueError):
    pass


class UsageError(AdvDriveError, RuntimeError):
    pass


class ProtocolError(AdvDriveError, RuntimeError):
    """Environment used outside its episode protocol."""


class ConfigError(AdvDriveError, ValueError):
    pass


class CheckpointError(AdvDriveError):
    pass


class CheckpointFormatError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointCorruptError(CheckpointError):
    pass


class CompatibilityError(CheckpointError):
    """Checkpoint does not fit the slot or environment it was given to."""
