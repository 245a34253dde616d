"""Exception types shared across the package."""


class KamlabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(KamlabError, ValueError):
    """Invalid grid, discretization or experiment configuration."""


class NumericalError(KamlabError, RuntimeError):
    """An iterative solver failed to converge or lost positivity."""
