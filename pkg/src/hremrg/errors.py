"""Exception hierarchy shared by every module."""


class HremrgError(Exception):
    """Base class for library errors."""


class ShapeError(HremrgError, ValueError):
    pass


class ContractError(HremrgError, ValueError):
    pass


class EmptyRegionError(HremrgError, ValueError):
    pass


class VocabularyError(HremrgError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "vocabulary error"


class SequenceLengthError(HremrgError, ValueError):
    pass


class FeatureFileError(HremrgError):
    """Raised for unreadable feature files; subclasses name the defect."""


class BadMagicError(FeatureFileError):
    pass


class DimensionMismatchError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class CheckpointError(HremrgError):
    pass


class SearchBudgetError(HremrgError):
    def __init__(self, required, limit):
        super().__init__(f"grid search needs {required} evaluations, limit is {limit}")
        self.required = required
        self.limit = limit


class ScorerFailure(HremrgError):
    """Wraps a scorer exception and keeps the partial search trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace
