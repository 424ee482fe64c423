class ConfigError(Exception):
    """Bad configuration value, unknown preset, or inconsistent dimensions."""


class UsageError(Exception):
    """An operation was called outside its contract."""


class SchemaError(Exception):
    """An on-disk artifact has an incompatible schema version or shape."""
