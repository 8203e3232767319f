"""Exception types raised across the package."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where a finite value is required.

    ``layer`` is the network layer index, ``particle`` the particle index;
    either may be ``None`` when it cannot be attributed.
    """

    def __init__(self, message, layer=None, particle=None):
        super().__init__(message)
        self.layer = layer
        self.particle = particle


class WeightCollapseError(RuntimeError):
    """Every particle received zero weight (all log-potentials are -inf)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularParameterError(ValueError):
    """A parameter value at which the model is undefined."""


class KernelTargetError(FloatingPointError):
    """An MCMC target returned NaN."""


class CSVFormatError(ValueError):
    """Malformed CSV input; ``row`` is the 1-based line number in the file."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
