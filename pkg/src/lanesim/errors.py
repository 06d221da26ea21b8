"""Exception types shared across the package."""


class LanesimError(Exception):
    """Base class for all package errors."""


class DimensionError(LanesimError):
    """Operands have incompatible shapes or lengths."""


class StructureError(LanesimError):
    """A compact container violates its structural invariants."""


class ParameterError(LanesimError):
    """A numeric parameter is outside its allowed range."""


class ConfigError(LanesimError):
    """An accelerator configuration violates one or more constraints.

    ``violations`` lists every failed constraint, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class CapacityError(LanesimError):
    """A partition does not fit in the configured SRAM capacities."""


class CalibrationError(LanesimError):
    """Synthetic activation calibration failed to reach its target."""


class SimulationIntegrityError(LanesimError):
    """An internal consistency check of the simulator failed (a bug)."""


class ReportError(LanesimError):
    """A report file could not be produced or parsed."""
