"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: missing key, unknown key, or invariant violation."""


class NumericalError(RuntimeError):
    """A simulation or fit produced non-finite or otherwise unusable values."""


class QuadratureError(NumericalError):
    """Fourier pricing quadrature did not reach the requested accuracy."""


class ArbitrageError(NumericalError):
    """A call-price grid violates static no-arbitrage beyond repairable tolerance."""
