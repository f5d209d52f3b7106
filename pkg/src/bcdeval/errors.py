"""Exception hierarchy shared by all modules."""


class BcdEvalError(Exception):
    """Base class for toolkit errors."""


class CyclicGraph(BcdEvalError, ValueError):
    pass


class NonBinaryMatrix(BcdEvalError, ValueError):
    pass


class NonSquareMatrix(BcdEvalError, ValueError):
    pass


class DimensionTooLarge(BcdEvalError, ValueError):
    pass


class DimensionMismatch(BcdEvalError, ValueError):
    pass


class SingularSystem(BcdEvalError, ArithmeticError):
    pass


class SingularPrecision(BcdEvalError, ArithmeticError):
    pass


class DegenerateColumn(BcdEvalError, ValueError):
    pass


class DegenerateLabels(BcdEvalError, ValueError):
    """Ground truth has no negatives or no positives; AUROC is undefined."""


class EmptySampleSet(BcdEvalError, ValueError):
    pass


class DuplicateSamples(BcdEvalError, ValueError):
    pass


class TooFewSamples(BcdEvalError, ValueError):
    pass


class DegenerateRanking(BcdEvalError, ValueError):
    """A ranking vector is constant, so rank correlation is undefined."""


class ConfigError(BcdEvalError, ValueError):
    pass
