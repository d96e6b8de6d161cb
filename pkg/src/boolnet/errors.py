"""Exception types shared across the package."""


class BoolNetError(Exception):
    """Base class for all package-specific errors."""


class NonBinaryValue(BoolNetError):
    """A tensor that must contain only -1.0/+1.0 held something else."""


class NonFinite(BoolNetError):
    """NaN or infinity where a finite value is required."""


class LengthMismatch(BoolNetError):
    """Word spans of different lengths passed to a reduction."""


class ShapeMismatch(BoolNetError):
    """Operand shapes are incompatible."""


class GroupMismatch(BoolNetError):
    """Channel count not divisible by the group count of a convolution."""


class OddChannelSplit(BoolNetError):
    """channel_split requires an even number of channels."""


class GroupDivisibility(BoolNetError):
    """channel_shuffle requires channels divisible by the group count."""


class DegenerateChannel(BoolNetError):
    """BatchNorm fusion is undefined for a channel with gamma == 0."""


class ConfigInvalid(BoolNetError):
    """A ModelConfig violates one of its invariants."""


class NonFiniteLoss(BoolNetError):
    """Training loss became NaN/inf; aborting with diagnostics."""


class MissingPowerEntry(BoolNetError):
    """The PowerConfig lacks an entry required by the energy model."""


class ModelFileError(BoolNetError):
    """Base class for model container I/O failures."""


class BadMagic(ModelFileError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(ModelFileError):
    """Container version not understood by this build."""


class TruncatedFile(ModelFileError):
    """File ended before the payload described by its header."""


class ChecksumMismatch(ModelFileError):
    """Trailing CRC32 does not match the payload."""


class FormatError(BoolNetError):
    """Malformed dataset file; message carries the byte offset."""
