# tcc/errors.py
"""Exception hierarchy shared by the library and the CLI exit-code mapping."""
from typing import Optional


class TCCError(Exception):
    exit_code = 1


class ConfigError(TCCError):
    exit_code = 1


class DataFormatError(TCCError):
    exit_code = 2


class ShapeError(TCCError):
    exit_code = 2


class NumericError(TCCError):
    """A loss or activation became non-finite during training."""
    exit_code = 3

    def __init__(self, message: str, term: Optional[str] = None, step: Optional[int] = None):
        super().__init__(message)
        self.term = term
        self.step = step


class LossInputError(ValueError):
    pass
