"""Integer forward pass of the full model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import qnum
from ..approx import (
    PiecewiseLinearFn, QNormParams, eval_piecewise, exp_approx, range_norm, silu_approx,
)
from ..errors import ConfigError
from ..qnum import QTensor
from .config import MambaConfig
from .layers import (
    ABAR_SCALE_EXP, QBlock, add, conv1d_causal, linear, mean_pool,
    multiply, patchify, ssm_scan,
)
from .weights import MambaWeights

BLOCK_TENSORS = (
    "norm.gamma", "norm.beta", "gate_proj.weight", "gate_proj.bias", "in_proj.weight",
    "in_proj.bias", "conv.weight", "conv.bias", "dt_proj.weight", "dt_proj.bias",
    "b_proj.weight", "b_proj.bias", "c_proj.weight", "c_proj.bias", "A", "D",
    "out_proj.weight", "out_proj.bias",
)
BLOCK_ACTIVATIONS = (
    "norm", "gate_lin", "gate", "in", "conv", "xs", "dt", "b", "c", "z", "bbar", "h",
    "y", "gated", "out", "res",
)


@dataclass
class Model:
    """A configuration with its weights and the piecewise approximations it runs with."""

    config: MambaConfig
    weights: MambaWeights
    silu: PiecewiseLinearFn = field(default_factory=silu_approx)
    exp: PiecewiseLinearFn = field(default_factory=exp_approx)

    def block(self, index: int) -> QBlock:
        if not self.weights.is_quantized:
            raise ConfigError("model has no quantized tensors; run quantize_model first")
        p = f"blocks.{index}."
        q, s = self.weights.quant, self.weights.act_scales
        scales = {name: s[p + name] for name in BLOCK_ACTIVATIONS}
        bits = self.config.act_bits
        return QBlock(
            tensors={name: q[p + name] for name in BLOCK_TENSORS},
            scales=scales,
            silu_gate=self.silu.quantize(scales["gate_lin"], scales["gate"], bits),
            silu_main=self.silu.quantize(scales["conv"], scales["xs"], bits),
            exp=self.exp.quantize(scales["z"], ABAR_SCALE_EXP, bits),
            act_bits=bits,
            h_bits=self.config.h_bits,
        )


def _trace(trace, name, value):
    if trace is not None:
        trace[name] = value


def mamba_block_forward(x: QTensor, block: QBlock, trace: dict | None = None,
                        prefix: str = "") -> QTensor:
    """Range norm, gated SiLU branch, conv + SSM branch, out projection, residual."""
    s, bits = block.scales, block.act_bits
    n = range_norm(x, QNormParams(block["norm.gamma"], block["norm.beta"]), s["norm"], bits)
    gate_lin = linear(n, block["gate_proj.weight"], block["gate_proj.bias"], s["gate_lin"], bits)
    gate = eval_piecewise(block.silu_gate, gate_lin)
    u = linear(n, block["in_proj.weight"], block["in_proj.bias"], s["in"], bits)
    conv = conv1d_causal(u, block["conv.weight"], block["conv.bias"], s["conv"], bits)
    xs = eval_piecewise(block.silu_main, conv)
    y = ssm_scan(xs, block)
    gated = multiply(y, gate, s["gated"], bits)
    out = linear(gated, block["out_proj.weight"], block["out_proj.bias"], s["out"], bits)
    res = add(x, out, s["res"], bits)
    if trace is not None:
        for name, value in (("norm", n), ("gate_lin", gate_lin), ("gate", gate), ("in", u),
                            ("conv", conv), ("xs", xs), ("y", y), ("gated", gated),
                            ("out", out), ("res", res)):
            trace[prefix + name] = value
    return res


def quantize_frame(frame, model: Model) -> QTensor:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != model.config.frame_shape:
        raise ConfigError(f"frame has shape {frame.shape}, model expects {model.config.frame_shape}")
    return qnum.quantize(frame, model.weights.act_scales["frame"], model.config.act_bits)


def model_forward_q(frame, model: Model, trace: dict | None = None) -> QTensor:
    """Integer prediction for one frame (real array or pre-quantized QTensor)."""
    if not model.weights.is_quantized:
        raise ConfigError("model has no quantized tensors; run quantize_model first")
    cfg, q, s = model.config, model.weights.quant, model.weights.act_scales
    bits = cfg.act_bits
    xq = frame if isinstance(frame, QTensor) else quantize_frame(frame, model)
    _trace(trace, "frame", xq)
    tokens = patchify(xq, cfg.P)
    x = linear(tokens, q["embed.weight"], q["embed.bias"], s["embed"], bits)
    _trace(trace, "embed", x)
    for i in range(cfg.M):
        x = mamba_block_forward(x, model.block(i), trace, f"blocks.{i}.")
    pooled = mean_pool(x, s["pool"], bits)
    _trace(trace, "pool", pooled)
    if cfg.head_hidden:
        hidden = linear(pooled, q["head.hidden.weight"], q["head.hidden.bias"], s["head.hidden"], bits)
        hidden = QTensor(np.maximum(hidden.data, 0), bits, hidden.scale_exp)
        _trace(trace, "head.hidden", hidden)
        pooled = hidden
    out = linear(pooled, q["head.out.weight"], q["head.out.bias"], s["head.out"], bits)
    _trace(trace, "head.out", out)
    return out


def model_forward(frame, model: Model, trace: dict | None = None) -> np.ndarray:
    """Dequantized prediction vector (``out_dim`` values) of the integer path."""
    return qnum.dequantize(model_forward_q(frame, model, trace))


def predict(frames, model: Model) -> np.ndarray:
    return np.stack([model_forward(f, model) for f in frames])
