"""Exception types that map onto the CLI's exit codes."""


class DataError(Exception):
    """A file or payload the user supplied is malformed or inconsistent."""


class NumericFailure(Exception):
    """Training produced a non-finite loss."""
