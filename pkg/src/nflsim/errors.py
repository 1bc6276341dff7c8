"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class LayoutError(ValueError):
    """Parameter vector or batch does not fit the model layout."""


class PartitionError(ValueError):
    """Data cannot be partitioned as requested."""


class ProtocolError(ValueError):
    """Malformed or inconsistent round-level inputs."""
