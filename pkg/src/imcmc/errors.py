"""Exception hierarchy shared by all modules."""


class IMCMCError(Exception):
    """Base class for every error raised by :mod:`imcmc`."""


class SpaceMismatchError(IMCMCError, ValueError):
    """Two objects live on different state spaces, or a state is not in the space."""


class InvalidKernelError(IMCMCError, ValueError):
    """A kernel row is negative or does not sum to one."""


class DegeneratePotentialError(IMCMCError, ZeroDivisionError):
    """A potential has zero mass under the measure it is applied to."""


class DesyncError(IMCMCError, ValueError):
    """Occupation measures that must share a tick do not."""


class NonErgodicError(IMCMCError, ValueError):
    """No contracting power of a kernel was found."""


class AbsoluteContinuityError(IMCMCError, ValueError):
    """A Radon-Nikodym ratio is unbounded or undefined."""


class TooLargeError(IMCMCError, ValueError):
    """An enumeration would exceed the configured guard."""


class InvalidParameterError(IMCMCError, ValueError):
    pass


class InvalidDataError(IMCMCError, ValueError):
    pass


class DependencyError(IMCMCError, ValueError):
    pass


class ConfigError(IMCMCError, ValueError):
    """An experiment configuration failed validation."""
