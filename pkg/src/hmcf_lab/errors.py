"""Exception hierarchy shared by the lab; each class knows its CLI exit code."""


class LabError(Exception):
    exit_code = 3


class ConfigError(LabError):
    """Invalid or unreadable run configuration."""
    exit_code = 2


class MissingInputError(LabError):
    exit_code = 2


class NumericalError(LabError):
    exit_code = 3


class DomainError(NumericalError):
    """Point inside the excluded unit ball, or surface below the inner volume sphere."""


class MetricValidityError(NumericalError):
    pass


class MeanConvexityError(NumericalError):
    pass


class FSingularityError(NumericalError):
    pass


class GraphDegeneracyError(NumericalError):
    """Surface folds over the radial fibration."""


class NotRoundError(NumericalError):
    pass


class MassUndefinedError(NumericalError):
    pass


class TimeStepUnderflowError(NumericalError):
    pass


class EigenSolverError(NumericalError):
    pass


class GridMismatchError(NumericalError):
    pass
