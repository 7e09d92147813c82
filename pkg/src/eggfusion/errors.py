"""Exception types shared across the package."""


class EggFusionError(Exception):
    pass


class ConfigError(EggFusionError, ValueError):
    """Invalid configuration or preconditions violated by the caller."""


class SchemaError(EggFusionError, ValueError):
    """An input file does not conform to its documented schema."""


class ContractError(EggFusionError, ValueError):
    """An argument breaks an operation's input contract (shape, simplex, size)."""


class CapabilityError(EggFusionError, RuntimeError):
    """A requested backend or resource is not available in this environment."""


class LoadError(EggFusionError, OSError):
    """One or more dataset records could not be read.

    ``failures`` holds ``(image_id, reason)`` pairs.
    """

    def __init__(self, failures):
        self.failures = list(failures)
        lines = "\n".join(f"  {i}: {r}" for i, r in self.failures)
        super().__init__(f"{len(self.failures)} record(s) failed to load:\n{lines}")
