"""Exception types shared across the package."""


class FrameError(ValueError):
    """A field sample arrived tagged with the wrong reference frame."""


class IntegrationDivergedError(RuntimeError):
    """The integrated state left the finite domain.

    Carries the simulation time at which the blow-up was detected.
    """

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


class ConfigError(ValueError):
    """A scenario configuration failed parsing or validation."""
