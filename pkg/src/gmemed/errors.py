"""Exception hierarchy shared across the package.

Two broad failure classes matter to callers: bad input (``ValidationError``,
CLI exit code 1) and numerics that did not converge or were under-resolved
(``NumericsError``, CLI exit code 2).
"""


class GmeMedError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GmeMedError, ValueError):
    """Invalid physical input: broken invariants, malformed specs."""


class ConfigError(ValidationError):
    """Malformed configuration file; message carries file/line anchors."""


class NumericsError(GmeMedError, RuntimeError):
    """A numerical procedure failed or its resolution is insufficient."""


class ConvergenceError(NumericsError):
    """An iterative refinement exhausted its budget before converging."""


class UndecayedKernelError(NumericsError):
    """Memory kernel has not decayed by the end of its time grid."""


class CoarseGridError(NumericsError):
    """Time grid too coarse to resolve the fastest kernel oscillation."""
