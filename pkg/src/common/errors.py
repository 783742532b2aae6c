# src/common/errors.py

from typing import Optional


class AutoFieldError(Exception):
    """Base class for every failure raised by this package."""


class ConfigError(AutoFieldError, ValueError):
    """Invalid settings: bad ratios, out-of-range K, unknown config keys, etc."""


class ParseError(AutoFieldError, ValueError):
    """A raw input row could not be parsed."""

    def __init__(self, message: str, line_no: Optional[int] = None, path: Optional[str] = None):
        self.line_no = line_no
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}:"
        if line_no is not None:
            location += f"line {line_no}: "
        elif location:
            location += " "
        super().__init__(f"{location}{message}")


class ContractViolation(AutoFieldError, ValueError):
    """A shape, bounds or state precondition of an operation was broken."""


class NonFiniteError(AutoFieldError, FloatingPointError):
    """A parameter or gradient array holds NaN or Inf."""

    def __init__(self, name: str, what: str = "gradient"):
        self.name = name
        super().__init__(f"Non-finite {what} for parameter '{name}'")


class DivergenceError(AutoFieldError, FloatingPointError):
    """Training produced a non-finite loss."""


class MetricUndefinedError(AutoFieldError, ValueError):
    """The metric is not defined for the given input (e.g. single-class AUC)."""


class SchemaDriftError(AutoFieldError, ValueError):
    """A ledger file does not have the expected columns."""

    def __init__(self, path: str, detail: str):
        self.path = path
        super().__init__(f"Ledger '{path}' is not schema-compatible: {detail}")
