"""Exception hierarchy shared by all estimation stages.

Every error carries an ``exit_code`` so the CLI can map failures onto its
stable contract: 2 for configuration problems, 3 for data problems, 4 for
numerical failures.
"""


class CatrnetError(Exception):
    exit_code = 1


class ConfigError(CatrnetError):
    exit_code = 2


class InvalidParameterError(ConfigError):
    """A caller-supplied parameter is outside its admissible range."""


class InvalidSpecError(ConfigError):
    """A basis or quadrature specification is malformed."""


class DataError(CatrnetError):
    exit_code = 3


class SchemaError(DataError):
    """A required column is missing from an input table."""


class ParseError(DataError):
    """A cell failed numeric parsing; message names row and column."""


class EmptyDataError(DataError):
    """An input table contains no data rows."""


class IsolatedUnitError(DataError):
    """A unit without peers was asked for a spillover value."""


class NumericalError(CatrnetError):
    exit_code = 4


class SingularDesignError(NumericalError):
    """A design or normal matrix is numerically singular."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, iterations=None, objective=None):
        super().__init__(message)
        self.iterations = iterations
        self.objective = objective


class SparseWindowError(NumericalError):
    """Too few kernel-active observations around an evaluation point."""


class SingularWindowError(NumericalError):
    """The local weighted Gram matrix is singular at an evaluation point."""


class DegenerateLambdaError(NumericalError):
    """The estimated endogeneity-bias surface is numerically zero."""
