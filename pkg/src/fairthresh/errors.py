"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class FairthreshError(Exception):
    exit_code = 1


class SchemaError(FairthreshError):
    """A file or argument does not match the documented schema."""

    exit_code = 2


class DataValueError(SchemaError):
    """A sensitive/label cell holds something other than 0 or 1."""


class ParseError(SchemaError):
    """A cell could not be parsed as a finite real."""


class GroupCoverageError(FairthreshError):
    """A sensitive group required by the computation is absent or too small."""

    exit_code = 3


class NumericError(FairthreshError):
    """A numerical routine failed (bad bracket, non-finite value)."""

    exit_code = 4


class ConfigError(FairthreshError):
    """An invalid configuration value (fractions, grids, plans)."""

    exit_code = 5
