"""Shared exception types for the flowmm package."""


class FlowMMError(Exception):
    """Base class for all package errors."""


class InputError(FlowMMError, ValueError):
    """An argument violated an operation's preconditions (rejected input)."""


class UsageError(FlowMMError, RuntimeError):
    """An operation was called in an invalid sequence or state."""


class ConfigError(FlowMMError, ValueError):
    """Mutually inconsistent configuration (e.g. horizon mismatch between nets)."""


class LoadError(FlowMMError, ValueError):
    """A persisted artifact could not be read back (corrupt, truncated, wrong version)."""
