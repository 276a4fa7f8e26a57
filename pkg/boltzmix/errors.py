"""Exception hierarchy shared by every boltzmix module and mapped to CLI exit codes."""


class BoltzmixError(Exception):
    """Base class for all boltzmix errors."""

    exit_code = 1


class ConfigError(BoltzmixError, ValueError):
    """Invalid configuration or violated input invariant."""

    exit_code = 2


class BelowThresholdError(ConfigError):
    """Moment constants requested below the averaging threshold k_bar_star."""


class MissingMomentError(ConfigError):
    """A bound needs a moment order that the supplied moments do not carry."""


class CheckFailure(BoltzmixError):
    """A verification check did not hold."""

    exit_code = 3


class NumericalAbort(BoltzmixError):
    """A numerical procedure could not continue."""

    exit_code = 4


class MajorantViolation(NumericalAbort):
    """Kernel value exceeded the DSMC majorant beyond the recompute slack."""


class DegenerateParametrization(NumericalAbort):
    """Jacobian requested at a boundary value of the energy-exchange parameters."""


class QuadratureError(NumericalAbort):
    """Adaptive quadrature did not converge."""
