"""Exception hierarchy shared by every pipeline stage.

Every domain error carries a stable ``name`` so the CLI can report it on
stderr without leaking tracebacks.
"""


class EvloadError(Exception):
    """Base class for all domain errors (CLI exit code 1)."""

    @property
    def name(self) -> str:
        return type(self).__name__.removesuffix("Error")


# ingest
class MalformedHeaderError(EvloadError):
    pass


class EmptyInputError(EvloadError):
    pass


class DuplicateTimestampError(EvloadError):
    def __init__(self, timestamp):
        super().__init__(f"duplicate timestamp {timestamp}")
        self.timestamp = timestamp


class IrregularSamplingError(EvloadError):
    pass


class AllMissingError(EvloadError):
    pass


# features / analysis
class EmptySeriesError(EvloadError):
    pass


class LengthMismatchError(EvloadError):
    pass


class WindowTooLargeError(EvloadError):
    pass


class LengthTooShortError(EvloadError):
    pass


class NoPeaksError(EvloadError):
    pass


# model / training
class InvalidDimsError(EvloadError):
    pass


class ShapeMismatchError(EvloadError):
    pass


class NonFiniteInputError(EvloadError):
    pass


class NonFiniteGradientError(EvloadError):
    pass


class SeriesTooShortError(EvloadError):
    pass


class EmptySplitError(EvloadError):
    pass


class MissingCheckpointError(EvloadError):
    pass


class InvalidConfigError(EvloadError):
    pass


# evaluation
class ZeroVarianceError(EvloadError):
    pass


# grid validation
class InvalidSizeError(EvloadError):
    pass


class InvalidCaseError(EvloadError):
    pass


class NonConvergenceError(EvloadError):
    def __init__(self, message, *, mismatch=float("nan"), iterations=0, scenario=None, timestep=None):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations
        self.scenario = scenario
        self.timestep = timestep


class ProfileMismatchError(EvloadError):
    pass


class DegenerateChannelWarning(UserWarning):
    """A feature channel is identically zero; it is emitted as zeros."""
