"""Exception types raised across the package."""


class BayesRLError(Exception):
    """Base class for library errors."""


class ArgumentError(BayesRLError, ValueError):
    """An argument is out of range or malformed."""


class ModelIncompleteError(BayesRLError, KeyError):
    """A DBN model lacks a conditional distribution for some parent assignment."""


class CapacityError(BayesRLError):
    """A state space is too large to enumerate or flatten."""


class DomainError(BayesRLError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class TopologyParseError(BayesRLError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
