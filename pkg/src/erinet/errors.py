"""Exception types shared across the package.

Every error raised by the numeric core or the pipeline derives from
:class:`ErinetError` so callers can catch package failures in one clause.
"""


class ErinetError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(ErinetError):
    """Operand shapes are incompatible for the requested operation."""


class AxisOutOfRange(ErinetError):
    """A reduction axis is invalid or repeated."""


class NotScalar(ErinetError):
    """backward() was called on a non-scalar tensor."""


class NonFiniteGradient(ErinetError):
    """A NaN or Inf gradient was produced; the message names the op."""


class LengthOutOfRange(ErinetError):
    """A sequence length is outside [1, T]."""


class BatchTooSmall(ErinetError):
    """Batch (or vector) is too small for a correlation computation."""


class FrozenModel(ErinetError):
    """A training step was attempted on a frozen model."""


class FrozenViolation(ErinetError):
    """The extractor must be frozen for this operation (or changed while frozen)."""


class LabelOutOfRange(ErinetError):
    """A label value is outside its documented range."""


class ZeroVariance(ErinetError):
    """Pearson correlation is undefined: one input has (near-)zero variance."""


class ZeroDenominator(ErinetError):
    """Concordance correlation is undefined: both inputs constant and equal."""


class RowCountMismatch(ErinetError):
    """Prediction and target matrices have different row counts."""


class EmptyVideo(ErinetError):
    """A video has no frames."""


class ConfigInvalid(ErinetError):
    """A configuration value violates its constraints."""


class ManifestInvalid(ErinetError):
    """A dataset manifest violates its invariants."""


class SplitEmpty(ErinetError):
    """The requested dataset split contains no samples."""


class ChecksumFailure(ErinetError):
    """Checkpoint CRC32 does not match its payload."""


class VersionUnsupported(ErinetError):
    """Checkpoint format version is not readable by this build."""


class NameTableMismatch(ErinetError):
    """Checkpoint parameter table does not match the target models."""
