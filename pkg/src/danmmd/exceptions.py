"""Exception hierarchy shared by every module of the package."""


class DanError(Exception):
    """Base class for all errors raised by danmmd."""


class InputError(DanError, ValueError):
    """Malformed or insufficient input data (shapes, counts, labels)."""


class ParameterError(DanError, ValueError):
    """A hyper-parameter is outside its admissible range."""


class DegenerateInputError(InputError):
    """Input is well-formed but carries no usable information."""


class InfeasibleDirectionError(DanError, ArithmeticError):
    """The kernel-weight QP has an empty feasible set (no positive d_u)."""


class SolverError(DanError, ArithmeticError):
    """The kernel-weight solver failed to reach a KKT point."""


class NumericError(DanError, ArithmeticError):
    """A non-finite value appeared during a forward/backward pass or update."""


class ParseError(DanError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
