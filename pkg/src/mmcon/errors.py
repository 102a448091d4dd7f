"""Exception hierarchy.

Validation problems (bad shapes, bad files, bad configs) derive from
:class:`ValidationError`; numerical breakdowns (NaN/Inf, degenerate
embeddings) derive from :class:`NumericalError`.  The CLI maps the two
families onto exit codes 1 and 2.
"""


class MMConError(Exception):
    pass


class ValidationError(MMConError, ValueError):
    pass


class NumericalError(MMConError, ArithmeticError):
    pass


class DimensionMismatch(ValidationError):
    pass


class MixedDimensions(ValidationError):
    pass


class ZeroNorm(ValidationError):
    pass


class EmptyPositiveSet(ValidationError):
    pass


class EmptyDenominator(ValidationError):
    pass


class SingletonBatch(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class MalformedHeader(ValidationError):
    pass


class InconsistentRow(ValidationError):
    pass


class DuplicatePatient(ValidationError):
    pass


class TooManyFolds(ValidationError):
    pass


class EmptyTestSet(ValidationError):
    pass


class EmptyCounts(ValidationError):
    pass


class NoPairs(ValidationError):
    pass


class DegenerateEmbedding(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass
