"""Exception hierarchy shared by all subpackages.

Each class carries the CLI exit code it maps to so the command-line layer can
translate failures without a lookup table.
"""


class SeqClfError(Exception):
    exit_code = 1


class DimensionError(SeqClfError, ValueError):
    pass


class EmptyAttentionError(SeqClfError, ValueError):
    def __init__(self, message="empty attention support"):
        super().__init__(message)


class StateError(SeqClfError, RuntimeError):
    pass


class NumericalError(SeqClfError, FloatingPointError):
    exit_code = 3


class ConfigurationError(SeqClfError, ValueError):
    exit_code = 2


class FormatError(SeqClfError, ValueError):
    """Malformed or unreadable file."""

    exit_code = 2


class CorruptionError(FormatError):
    """Checksum mismatch or truncated payload."""


class DataError(SeqClfError, ValueError):
    exit_code = 2


class ProtocolError(SeqClfError):
    """Speaker leakage between train and test."""

    exit_code = 4
