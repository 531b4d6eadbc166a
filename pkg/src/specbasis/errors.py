"""Exception types shared across the package."""


class SpecbasisError(Exception):
    """Base class for all package errors."""


class DimensionError(SpecbasisError, ValueError):
    """Operand shapes or axes are incompatible."""


class ContractError(SpecbasisError, ValueError):
    """A call violated an operation precondition."""


class NonFiniteError(SpecbasisError, FloatingPointError):
    """A NaN or Inf appeared in a value or gradient."""


class DegenerateBasisError(SpecbasisError, ArithmeticError):
    """Columns handed to QR are numerically dependent.

    ``column`` is the zero-based index of the first offending column and
    ``step`` is filled in by the training loop when available.
    """

    def __init__(self, message, column=None, step=None):
        super().__init__(message)
        self.column = column
        self.step = step


class SingularGramError(SpecbasisError, ArithmeticError):
    """A Gram matrix stayed non positive-definite after maximal jitter."""


class SmoothingUnderflowError(SpecbasisError, ArithmeticError):
    """Every Gaussian weight in a smoother row underflowed; increase sigma."""


class DegenerateGeometryError(SpecbasisError, ValueError):
    """Coincident points, zero-area faces and similar geometric degeneracies."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ParseError(SpecbasisError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(SpecbasisError, ValueError):
    """Invalid run configuration (unknown key, bad value)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
