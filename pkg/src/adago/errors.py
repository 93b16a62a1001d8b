"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Malformed input: wrong shape, non-finite entries, bad argument range."""


class DegenerateInputError(ValueError):
    """Input for which the requested quantity is undefined (e.g. Orth(0))."""


class NumericFailureError(ArithmeticError):
    """An iterative kernel failed to converge."""


class ConfigurationError(ValueError):
    """Inconsistent optimizer, model or experiment configuration."""


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters it was built from changed."""
