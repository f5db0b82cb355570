"""Exception types raised across the package."""


class TackError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(TackError):
    """A point lies on or behind the camera plane."""


class SingularIntrinsics(TackError):
    """The intrinsics matrix cannot be inverted."""


class DegenerateGeometry(TackError):
    """Rays are too close to parallel for a stable least-squares solution."""


class NoValidSubset(TackError):
    """Every camera subset produced degenerate geometry."""


class EmptyInput(TackError, ValueError):
    """An operation received an empty collection."""


class ShapeMismatch(TackError, ValueError):
    """Array or tensor shapes are incompatible."""


class NonScalarLoss(TackError, ValueError):
    """backward() was called on a tensor with more than one element."""


class InvalidConfig(TackError, ValueError):
    """A configuration value is out of range or malformed."""


class UnknownMode(InvalidConfig):
    """Unrecognised decoder conditioning mode."""


class RejectionBudgetExceeded(TackError):
    """Rejection sampling ran out of attempts."""


class FovBudgetExceeded(TackError):
    """Could not find a view whose keypoint projects inside the image."""


class CorruptManifest(TackError):
    """A dataset manifest is missing fields or inconsistent with its files."""


class NonFiniteLoss(TackError, FloatingPointError):
    """Training produced a NaN or infinite loss."""


class KTooSmall(TackError, ValueError):
    """Embedding visualisation needs at least three embedding dimensions."""


class EmptyDataset(EmptyInput):
    """Evaluation was asked to score zero samples."""
