"""Shared exception base so the CLI can map failures to exit codes."""


class RagcError(Exception):
    """Base class for all errors raised by this package."""
