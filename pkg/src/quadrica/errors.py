"""Exception types shared across the package."""


class QuadricaError(Exception):
    """Base class for package-specific failures."""


class NumericalError(QuadricaError):
    """A computation left its domain of validity (singular data, blow-up,
    isotropic degeneration, rank deficiency)."""


class ConfigError(QuadricaError):
    """Malformed or incomplete run configuration."""
