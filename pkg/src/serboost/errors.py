"""Exception hierarchy shared by every stage.

Errors split into two families so the CLI can map them onto exit codes:
``DataError`` for problems with the inputs (exit 2) and ``InvariantError``
for internal contract violations (exit 3).
"""


class SerBoostError(Exception):
    """Base class for all package errors."""


class DataError(SerBoostError):
    """The inputs cannot be processed as given."""


class InvariantError(SerBoostError):
    """An internal contract was violated."""


class ConfigError(SerBoostError):
    """A run configuration is invalid (unknown key, bad value)."""


# dataset_io
class MalformedContainer(DataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class EmptyAudio(DataError):
    pass


class UnrecognizedConvention(DataError):
    pass


class UnknownCode(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class ClassTooSmall(DataError):
    pass


# acoustic features
class SignalTooShort(DataError):
    pass


class EmptySeries(DataError):
    pass


class ManifestMismatch(DataError):
    pass


# feature boosting
class DegenerateClasses(DataError):
    pass


class NoImprovingCombination(DataError):
    """No sampled combination separates the classes better than the full set.

    The scored reports are attached so callers can still log them.
    """

    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)


class DegenerateInput(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptySelection(DataError):
    pass


# classifiers
class SingleClass(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class SchemaMismatch(DataError):
    pass


# explainability
class TooManyColumns(DataError):
    pass


class MissingProvenance(DataError):
    pass


# pipeline
class ActiveSetTooSmall(DataError):
    pass


class InsufficientRepeats(DataError):
    pass


class LeakageDetected(InvariantError):
    pass


class InfeasibleRequestWarning(UserWarning):
    """More combinations were requested than exist; the sample is exhaustive."""
