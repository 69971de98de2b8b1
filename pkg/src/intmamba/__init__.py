"""Integer-only inference toolkit for patch-token Mamba models.

Modules: :mod:`qnum` (power-of-two fixed point), :mod:`approx` (piecewise
activations and range norm), :mod:`mamba` (model, calibration, storage),
:mod:`pipesim` (pipeline cycle model), :mod:`nas` (configuration sweeps) and
:mod:`cli`.
"""

from .errors import (
    ConfigError, FitError, IntMambaError, InvalidInputError, ParseError, StateOverflowError,
)
from .qnum import QTensor, dequantize, quantize

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FitError", "IntMambaError", "InvalidInputError", "ParseError",
    "QTensor", "StateOverflowError", "__version__", "dequantize", "quantize",
]
