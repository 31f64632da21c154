"""Exception types raised across the package."""


class BPLSError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(BPLSError, ValueError):
    pass


class SingularInformation(BPLSError, ArithmeticError):
    """Newton system stayed indefinite after the ridge jitter was applied."""


class DegenerateFeature(BPLSError, ValueError):
    pass


class EmptyPool(BPLSError, ValueError):
    pass


class AllCandidatesInvalid(EmptyPool):
    """Every candidate in the pool carried the -inf sentinel score."""


class UnfittableInitialModel(BPLSError):
    pass


class EmptyTestSet(BPLSError, ValueError):
    pass


class GridTooCoarse(BPLSError):
    pass


class MissingTarget(BPLSError, KeyError):
    pass


class NonNumericFeature(BPLSError, ValueError):
    pass


class EmptyAfterDrop(BPLSError, ValueError):
    pass


class LabeledTooSmall(BPLSError, ValueError):
    pass


class ConfigError(BPLSError, ValueError):
    pass
