"""Post-training quantization of a float model.

Weights get a per-tensor power-of-two scale from their own range. Activation
scales come from running the float reference path over calibration frames.
"""

from __future__ import annotations

import numpy as np

from .. import qnum
from ..approx import NORM_PARAM_BITS
from ..errors import InvalidInputError
from .config import MambaConfig
from .layers import ABAR_SCALE_EXP
from .model import Model
from .reference import model_forward_ref
from .weights import MambaWeights

# One extra bit of headroom on the stored state, since the integer recurrence
# can drift above the float trajectory it was calibrated on.
STATE_HEADROOM_BITS = 1

# Biases live at the accumulator scale of their layer, as wide integers.
BIAS_BITS = 32


def bias_inputs(config: MambaConfig) -> dict[str, str]:
    """Map every bias tensor to the activation feeding its layer."""
    src = {"embed.bias": "frame"}
    for i in range(config.M):
        p = f"blocks.{i}."
        src.update({
            p + "gate_proj.bias": p + "norm", p + "in_proj.bias": p + "norm",
            p + "conv.bias": p + "in", p + "dt_proj.bias": p + "xs",
            p + "b_proj.bias": p + "xs", p + "c_proj.bias": p + "xs",
            p + "out_proj.bias": p + "gated",
        })
    if config.head_hidden:
        src["head.hidden.bias"] = "pool"
        src["head.out.bias"] = "head.hidden"
    else:
        src["head.out.bias"] = "pool"
    return src


def quantize_weights(config: MambaConfig, real: dict[str, np.ndarray],
                     act_scales: dict[str, int]) -> dict[str, qnum.QTensor]:
    quant = {}
    biases = bias_inputs(config)
    for name, value in real.items():
        if name in biases:
            continue
        bits = NORM_PARAM_BITS if ".norm." in name else config.weight_bits
        quant[name] = qnum.quantize(value, qnum.calibrate_scale(value, bits), bits)
    for name, src in biases.items():
        weight = quant[name[: -len("bias")] + "weight"]
        quant[name] = qnum.quantize(real[name], act_scales[src] + weight.scale_exp, BIAS_BITS)
    return quant


def calibrate_activations(
    config: MambaConfig,
    weights: MambaWeights,
    frames,
    coverage: float = 1.0,
) -> dict[str, int]:
    frames = list(frames)
    if not frames:
        raise InvalidInputError("calibration set is empty")
    trace: dict[str, list] = {}
    for frame in frames:
        model_forward_ref(frame, config, weights, trace)
    scales = {}
    stored_bits = config.h_bits + ABAR_SCALE_EXP
    for name, values in trace.items():
        samples = np.concatenate([np.ravel(v) for v in values])
        if name.endswith(".h"):
            scales[name] = qnum.calibrate_scale(samples, stored_bits, coverage) + STATE_HEADROOM_BITS
        else:
            scales[name] = qnum.calibrate_scale(samples, config.act_bits, coverage)
    return scales


def quantize_model(
    config: MambaConfig,
    weights: MambaWeights,
    calib_frames,
    coverage: float = 1.0,
) -> Model:
    """Return a :class:`Model` carrying quantized tensors and activation scales."""
    weights.validate(config)
    act_scales = calibrate_activations(config, weights, calib_frames, coverage)
    quant = quantize_weights(config, weights.real, act_scales)
    return Model(config, MambaWeights(real=dict(weights.real), quant=quant, act_scales=act_scales))
