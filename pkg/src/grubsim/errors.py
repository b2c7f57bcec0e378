"""Exception hierarchy for simulator errors."""


class GrubsimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(GrubsimError):
    """Malformed configuration, scenario file or unknown entity reference."""


class GenerationError(GrubsimError):
    """Workload generation could not satisfy its constraints."""


class LedgerCorruptionError(GrubsimError):
    """A bandwidth ledger went negative; the simulation state is corrupt."""


class InvariantViolation(GrubsimError):
    """A runtime invariant check failed (debug-assert mode)."""
