"""Exception hierarchy shared by every rhrnet module."""


class RhrNetError(Exception):
    """Base class for all rhrnet errors."""


class DimensionError(RhrNetError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(RhrNetError, ValueError):
    """A documented precondition was violated."""


class ConfigError(RhrNetError, ValueError):
    """Invalid model, schedule or run configuration."""


class CheckpointError(RhrNetError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class TrainingError(RhrNetError):
    """Non-finite loss or gradient during optimisation."""


class WavError(RhrNetError):
    pass


class MalformedWavError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class UnsupportedBitDepthError(WavError):
    pass


class DegenerateSignalError(RhrNetError, ValueError):
    """Silent or otherwise unusable signal."""


class SignalTooShortError(RhrNetError, ValueError):
    pass


class DataError(RhrNetError):
    """Unusable input data: bad manifest, missing files, wrong sample rate."""
