"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: ConfigError (and argparse
usage errors) exit 2, TraceError and OS-level I/O failures exit 1.
"""


class MoesimError(Exception):
    """Base class for all package errors."""


class ConfigError(MoesimError):
    """Invalid configuration or parameters (caught before any work starts)."""


class TraceError(MoesimError):
    """Base class for trace/event-log file problems."""


class TraceParseError(TraceError):
    """A line of a trace file is not valid JSON or is structurally wrong."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TraceValidationError(TraceError):
    """A parsed trace violates a data-model invariant."""
