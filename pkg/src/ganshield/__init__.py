"""Closed-loop defense of wide-area damping control against data attacks.

The package simulates a small multi-machine grid under LQR feedback whose
measurements travel over attackable links, trains an LSTM-based GAN to
recognize and rebuild tampered measurement windows, and wires detection,
sender identification, and imputation into the control loop.
"""
from .errors import CalibrationError, ConfigurationError, NumericError, SynthesisError
from .estimators import GanReconstructor, SenderAttackDetector
from .grid import GridModel, default_test_system, simulate
from .loop import run_closed_loop
from .lqr import synthesize_lqr, wide_area_weights

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ConfigurationError",
    "NumericError",
    "SynthesisError",
    "GanReconstructor",
    "SenderAttackDetector",
    "GridModel",
    "default_test_system",
    "simulate",
    "run_closed_loop",
    "synthesize_lqr",
    "wide_area_weights",
    "__version__",
]
