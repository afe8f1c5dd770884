"""Exception hierarchy shared across the package."""


class CoskillError(Exception):
    """Base class for all package errors."""


class DuplicateTimestamp(CoskillError):
    pass


class ParseError(CoskillError):
    pass


class SchemaError(CoskillError):
    pass


class MonotonicityError(CoskillError):
    pass


class IoError(CoskillError):
    pass


class MultiObjectMotion(CoskillError):
    def __init__(self, objects, t_range):
        self.objects = tuple(objects)
        self.t_range = tuple(t_range)
        super().__init__(
            f"objects {self.objects} move simultaneously in t=[{t_range[0]:.3f}, {t_range[1]:.3f}]"
        )


class NoCandidates(CoskillError):
    pass


class ExternalUnavailable(CoskillError):
    pass


class InvalidExternalReply(CoskillError):
    pass


class InsufficientData(CoskillError):
    pass


class DegenerateTrajectory(CoskillError):
    pass


class TypeMismatch(CoskillError):
    pass


class Unreachable(CoskillError):
    pass


class SearchBudgetExceeded(CoskillError):
    pass


class UnknownObject(CoskillError):
    pass


class UnknownSkill(CoskillError):
    pass


class ScriptInfeasible(CoskillError):
    pass


class StageError(CoskillError):
    """Wraps an error raised inside one stage of the learning pipeline."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
