"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical divergence with 3 and file-format / I/O failures with 4.
"""


class SLTError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(SLTError, ValueError):
    exit_code = 2


class DegeneratePhase(SLTError, ValueError):
    """The first Fourier mode is too small for its argument to be meaningful."""

    exit_code = 3


class SolverBlowup(SLTError, FloatingPointError):
    """Non-finite values appeared in the solver state.

    ``partial`` carries whatever zonal records were completed before the
    failure so callers can flush them.
    """

    exit_code = 3

    def __init__(self, message, time=None, partial=None):
        super().__init__(message)
        self.time = time
        self.partial = partial


class RolloutDiverged(SLTError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, step=None, member=None):
        super().__init__(message)
        self.step = step
        self.member = member


class NonFiniteLoss(SLTError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class FormatError(SLTError, IOError):
    exit_code = 4


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass
