"""Exception types shared across the calibration pipeline."""


class CalibrationError(Exception):
    """Base class for all errors raised by this package."""


class PointBehindCamera(CalibrationError):
    """Projection requested for a point at or behind the camera plane."""


class JointDimensionMismatch(CalibrationError):
    """Joint vector length does not match the robot's actuated joint count."""


class OutOfBounds(CalibrationError):
    """A pixel coordinate falls outside the associated image."""


class ChannelMismatch(CalibrationError):
    """Query feature and feature map disagree on channel count."""


class ZeroQueryFeature(CalibrationError):
    """Query feature has zero norm; cosine similarity is undefined."""


class LengthMismatch(CalibrationError):
    """Per-frame sequences (track, joints, frames) disagree in length."""


class TooFewVisible(CalibrationError):
    """Not enough visible track points to attempt a pose solve."""


class DegenerateGeometry(CalibrationError):
    """3D points are collinear or otherwise unusable for PnP."""


class SolverFailure(CalibrationError):
    """Pose solver produced a non-finite or cheirality-violating solution."""


class NoConsensus(CalibrationError):
    """RANSAC failed to find a consensus set of sufficient size."""


class ShapeMismatch(CalibrationError):
    """Image arrays have incompatible shapes."""


class ZeroGradientRegion(CalibrationError):
    """All renders around the current pose are empty; no gradient signal."""


class PlacementFailure(CalibrationError):
    """Camera placement rejection sampling exhausted its budget."""


class ConventionMismatch(CalibrationError):
    """Serialized transforms carry different convention strings."""


class EpisodeValidationError(CalibrationError):
    """Episode directory is missing required files or is inconsistent."""


class EmptyTargetWarning(UserWarning):
    """A target mask selected for refinement contains no foreground."""
