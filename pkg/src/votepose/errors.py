"""Exception types shared across the package."""


class VotePoseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidRotation(VotePoseError):
    """Rotation matrix fails orthonormality or det(R) = +1 checks."""


class BehindCamera(VotePoseError):
    """A point required to be in front of the camera has depth <= cutoff."""


class PlyParseError(VotePoseError):
    """Malformed PLY input. Message includes the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FileFormatError(VotePoseError):
    """Binary field dump or PGM mask failed format checks."""


class TooFewPoints(VotePoseError):
    """Model has fewer points than the operation requires."""


class KTooLarge(VotePoseError):
    """Requested more keypoints than there are surface points."""


class DimensionMismatch(VotePoseError):
    """Paired arrays disagree on shape (mask vs field, pred vs gt, ...)."""


class TooFewPixels(VotePoseError):
    """Mask does not contain enough usable on-object pixels."""


class NoValidHypotheses(VotePoseError):
    """Every sampled pixel pair was degenerate (parallel or backward rays)."""


class ZeroTotalWeight(VotePoseError):
    """All hypothesis weights are zero; the inlier threshold is too strict."""


class DegenerateConfiguration(VotePoseError):
    """3D points are collinear (or otherwise unusable) for pose solving."""


class ObjectNotVisible(VotePoseError):
    """Scene corruption removed every on-object pixel."""


class ConfigError(VotePoseError):
    """Experiment configuration failed validation. Message names the field path."""
