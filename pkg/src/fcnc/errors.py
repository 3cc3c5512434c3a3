"""Exception hierarchy shared across the package."""


class FcncError(Exception):
    """Base class for all library errors."""


class ShapeError(FcncError):
    """Operand shapes are incompatible."""


class ConfigError(FcncError):
    """A configuration value violates its contract."""


class InputError(FcncError):
    """A runtime input (sequence, label, mask) violates its contract."""


class VocabularyError(FcncError):
    """A character id falls outside the vocabulary."""


class DataError(FcncError):
    """A dataset file is missing, malformed, or inconsistent."""


class DivergenceError(FcncError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class GradCheckError(FcncError):
    """A gradient check hit a non-finite intermediate value."""


class CheckpointError(FcncError):
    """Base class for checkpoint file problems."""


class CheckpointMagicError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class CheckpointVersionError(CheckpointError):
    """The file uses an unsupported format version."""

    def __init__(self, found: int, supported: int):
        super().__init__(
            f"unsupported checkpoint version {found} (this build reads version {supported})"
        )
        self.found = found
        self.supported = supported


class CheckpointTruncatedError(CheckpointError):
    """The file ends before its declared contents do."""


class CheckpointChecksumError(CheckpointError):
    """The trailing CRC-32 does not match the file contents."""
