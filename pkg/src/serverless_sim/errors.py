"""Exception types shared across the simulator."""


class SimulationError(RuntimeError):
    """A logic error inside a run (duplicate response, accept on a non-ready pod, ...)."""


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` is the dotted path of the offending field."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")

    def under(self, prefix: str) -> "ConfigError":
        return type(self)(f"{prefix}.{self.key}" if self.key else prefix, self.message)


class UnknownKeyError(ConfigError):
    pass


class MissingFieldError(ConfigError):
    pass


class InvalidValueError(ConfigError):
    pass
