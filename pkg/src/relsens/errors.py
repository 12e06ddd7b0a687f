"""Exception hierarchy shared by all modules."""


class RelsensError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(RelsensError, ValueError):
    """Invalid distribution parameters, indices or arguments."""


class DomainError(RelsensError, ValueError):
    """An argument lies outside the domain of the function."""


class NoSolutionError(RelsensError):
    """The requested perturbation branch has no root in the admissible domain."""


class NumericalError(RelsensError, ArithmeticError):
    """An iterative method failed to converge or lost accuracy."""


class UndefinedIndexError(RelsensError):
    """The reference failure probability is zero, so the index is undefined."""


class UnsupportedOperationError(RelsensError):
    """The operation is not available for this kind of object."""


class IngestError(RelsensError):
    """A tabulated sample file could not be read."""


class ConfigError(RelsensError):
    """One or more configuration violations.

    All violations are collected in ``problems`` so that a user can fix a
    config file in one pass.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
