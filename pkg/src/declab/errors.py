"""Exception hierarchy shared by all declab modules."""


class DeclabError(Exception):
    """Base class; ``code`` is the CLI exit status for this failure."""

    code = 3


class SchemaError(DeclabError):
    code = 2


class InvalidParams(DeclabError):
    code = 2


class UnsupportedPair(DeclabError):
    pass


class UnsupportedDivergence(DeclabError):
    pass


class MixtureUnsupported(DeclabError):
    pass


class WeightDimError(DeclabError):
    code = 2


class NumericFailure(DeclabError):
    pass


class LPInfeasible(NumericFailure):
    pass


class LPUnbounded(NumericFailure):
    pass


class AllZeroLikelihood(DeclabError):
    pass


class EmptyActiveSet(DeclabError):
    pass


class UnknownContext(DeclabError):
    code = 2


class GammaTooSmall(DeclabError):
    code = 2


class NonconvergenceGuard(NumericFailure):
    pass
