"""Exception hierarchy shared by all modules."""


class ProfileCalError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(ProfileCalError, ValueError):
    pass


class DegenerateRotationError(ProfileCalError, ValueError):
    """Raised when a rotation axis is requested for a (near) identity rotation."""


class FrameMismatchError(ProfileCalError, ValueError):
    pass


class PlyParseError(ProfileCalError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AssumptionViolationError(ProfileCalError, ValueError):
    """End-effector rotation is not constant within one reconstructed cloud."""


class CoarseAlignmentError(ProfileCalError, RuntimeError):
    pass


class RegistrationError(ProfileCalError, RuntimeError):
    pass


class RankConditionError(ProfileCalError, RuntimeError):
    """The calibration system cannot be full column rank.

    ``diagnosis`` carries the :class:`~profilecal.calibration.RankDiagnosis`
    that triggered the refusal.
    """

    def __init__(self, message, diagnosis=None):
        super().__init__(message)
        self.diagnosis = diagnosis


class SingularSystemError(RankConditionError):
    pass


class StageError(ProfileCalError, RuntimeError):
    """Wraps a failure inside one stage of an experiment run."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
