"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    pass


class MalformedTranscriptError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


class TruncationError(ValueError):
    pass


class AmplificationInvalidError(ValueError):
    """The shuffling amplification bound does not apply.

    ``gate_bound`` is the largest local epsilon for which the bound holds at the
    requested ``(n, delta)`` (may be negative or NaN when no local epsilon works).
    """

    def __init__(self, message: str, gate_bound: float):
        super().__init__(message)
        self.gate_bound = gate_bound
