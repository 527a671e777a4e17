"""Exception hierarchy. ``exit_code`` feeds the CLI exit-code contract."""


class XPCBError(Exception):
    exit_code = 1


class DataError(XPCBError, ValueError):
    """Bad input data or configuration."""

    exit_code = 2


class ArtifactMismatch(XPCBError):
    """A checkpoint is missing or does not fit the configuration."""

    exit_code = 3


class NumericalError(XPCBError, FloatingPointError):
    """NaN/inf produced during a forward pass or training."""

    exit_code = 4
