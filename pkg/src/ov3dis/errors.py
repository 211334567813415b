"""Exception types shared across the pipeline."""


class StructureError(ValueError):
    """Inputs are structurally incompatible (width/size/dimension mismatch)."""


class BundleValidationError(Exception):
    """A scene bundle failed schema, hash, or invariant checks.

    Carries the full violation list so callers can report every problem at
    once instead of the first one hit.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "bundle validation failed with %d violation(s):\n%s"
            % (len(self.violations), "\n".join(f"  - {v}" for v in self.violations))
        )


class PowerIterationError(RuntimeError):
    """Principal-axis power iteration failed to converge."""

    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(alignment residual {residual:.3e})"
        )


class OracleSizeError(ValueError):
    """The brute-force oracle refused an input above its size guard."""


class ConfigError(ValueError):
    """Pipeline configuration file or overrides are invalid."""
