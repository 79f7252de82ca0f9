"""Exception hierarchy for the toolkit.

Every failure mode that callers are expected to handle gets its own class so
that CLI exit codes and test assertions can discriminate between them.
"""


class ChipError(Exception):
    """Base class for all toolkit errors."""


class ManifestError(ChipError):
    """Manifest content is invalid (duplicate layers, bad counts, unknown dtype)."""


class NpyFormatError(ChipError):
    """File is not a well-formed NPY v1.0 array we can accept."""


class ShapeMismatchError(ChipError):
    """Tensor shape disagrees with what the manifest declares."""


class NonFiniteValueError(ChipError):
    """Activation data contains NaN or Inf entries."""


class SvdFailureError(ChipError):
    """SVD did not converge, or produced values outside numerical tolerance."""


class MaskError(ChipError):
    """Row mask / prune mask violates its contract."""


class ScheduleError(ChipError):
    """Layer schedule is inconsistent with the architecture it targets."""


class CombinatorialGuardError(ChipError):
    """Brute-force enumeration would exceed the configured bound."""


class TrainingDivergedError(ChipError):
    """Training loss became non-finite."""
