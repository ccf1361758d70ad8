"""Shared exception types."""


class SizeLimitError(ValueError):
    """An enumeration or state space exceeds its configured cap."""


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""
