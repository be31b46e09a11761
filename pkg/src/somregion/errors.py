"""Exception hierarchy shared across the pipeline.

Each class maps to one CLI exit code (see cli.py): missing inputs,
malformed input bytes, and violated domain invariants are distinct
failure modes for scripting.
"""


class SomregionError(Exception):
    """Base class for all errors raised by this package."""


class MissingInputError(SomregionError):
    """A referenced input file or directory does not exist."""


class InputFormatError(SomregionError):
    """An input file is syntactically or semantically malformed.

    Carries enough context to locate the offender: line number and field
    name when they are known.
    """

    def __init__(self, message, *, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class ValidationError(SomregionError):
    """A domain invariant was violated (bad parameters, inconsistent data)."""
