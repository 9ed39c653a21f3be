"""Exception hierarchy.

Every error raised by credkit derives from :class:`CredkitError`. The
three intermediate classes decide the CLI exit code: usage problems map
to 1, bad input data to 2 and broken internal invariants to 3.
"""


class CredkitError(Exception):
    """Base class for all credkit errors."""


class UsageError(CredkitError):
    """Invalid arguments or configuration supplied by the caller."""


class DataError(CredkitError):
    """Input data that cannot be processed."""


class InvariantError(CredkitError):
    """An internal consistency check failed."""


# waveio
class MissingFile(DataError, FileNotFoundError):
    pass


class MalformedHeader(DataError):
    pass


class UnequalChannelLengths(DataError):
    pass


class NonPositiveSamplingRate(DataError):
    pass


class MalformedRow(DataError):
    pass


class SBeforeP(DataError):
    pass


class DuplicateId(DataError):
    pass


class WindowLongerThanTrace(DataError):
    pass


# dsp
class SamplingRateTooLow(DataError):
    pass


class TraceTooShort(DataError):
    pass


class SNotAfterP(DataError):
    pass


# synth
class FrequencyAboveNyquist(UsageError):
    pass


class NonPositivePeak(DataError):
    pass


class AllZeroClean(DataError):
    pass


class DoesNotFit(UsageError):
    pass


# nn / cred
class ShapeMismatch(InvariantError, ValueError):
    pass


class BatchTooSmall(UsageError):
    pass


class InvalidConfig(UsageError):
    pass


class GeometryMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


# detectors / eval
class ConfigError(UsageError):
    pass


class TemplateTooLong(UsageError):
    pass


class MisalignedInputs(DataError):
    pass
