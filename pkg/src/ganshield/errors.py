"""Exception types shared across the toolkit.

The CLI maps these onto exit codes, so raising the right class matters:
configuration problems must be distinguishable from numerical failures.
"""


class ConfigurationError(ValueError):
    """Bad user-supplied configuration (unknown keys, inconsistent values)."""


class NumericError(ArithmeticError):
    """Non-finite values or a numerically failed computation."""


class SynthesisError(RuntimeError):
    """Controller synthesis failed (non-stabilizable pair, stalled residual)."""


class CalibrationError(RuntimeError):
    """Threshold calibration cannot proceed (for example too little data)."""
