#!/usr/bin/env python
# -*- coding: utf-8 -*-

__all__ = [
    "VDEAError", "ContractError", "NumericError", "NumericDomainError",
    "DataError", "ParseError", "EmptyDatasetError", "NoOverlapError",
    "InsufficientDataError", "FormatError", "CorruptionError",
    "ShapeMismatchError", "ConfigError", "UsageError", "VDEAWarning", "ConvergenceWarning",
    "RegenerationWarning"]


class VDEAError(Exception):
    """Base class for every error raised by VDEARec

    Parameters
    ----------
    message: str
        the printed error message
    """
    def __init__(self, message):
        super(VDEAError, self).__init__(message)


class ContractError(VDEAError, ValueError):
    """Class to handle violated preconditions: wrong shapes, arguments out of
    range, unknown names
    """


class NumericError(VDEAError, ArithmeticError):
    """Class to handle non-finite activations and losses
    """


class NumericDomainError(NumericError):
    """Class to handle log, sqrt or division outside of their domain
    """


class DataError(VDEAError):
    """Class to handle problems with input or derived data
    """


class ParseError(DataError):
    """Class to handle malformed input rows

    Parameters
    ----------
    message: str
        the printed error message
    line: int
        1-based line number of the offending row in its file
    """
    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super(ParseError, self).__init__(message)
        self.line = line


class EmptyDatasetError(DataError):
    """Raised when preprocessing leaves nothing to train on
    """


class NoOverlapError(DataError):
    """Raised when the two domains share no user identity
    """


class InsufficientDataError(DataError):
    """Raised when a measurement needs more samples than it was given
    """


class FormatError(VDEAError):
    """Class to handle binary files with the wrong magic bytes or version
    """


class CorruptionError(FormatError):
    """Raised for truncated or internally inconsistent files
    """


class ShapeMismatchError(FormatError):
    """Raised when stored tensor shapes disagree with the expected ones
    """


class ConfigError(VDEAError):
    """Class to handle unknown or invalid configuration values
    """


class UsageError(ConfigError):
    """Raised for missing or malformed command-line arguments
    """


class VDEAWarning(UserWarning):
    """Base warning category for VDEARec
    """


class ConvergenceWarning(VDEAWarning):
    """An iterative solver stopped before reaching its tolerance
    """


class RegenerationWarning(VDEAWarning):
    """A randomized construction had to be redrawn
    """
