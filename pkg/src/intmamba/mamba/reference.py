"""Floating-point reference path.

Same graph as the integer path but with exact SiLU and exp and real-valued
range normalization, so the integer path differs from it only by quantization
and piecewise-linear error. The step size uses ReLU in both paths.
"""

from __future__ import annotations

import numpy as np

from ..approx import NormParams, exp_ref, range_norm_ref, silu_ref
from .config import MambaConfig
from .weights import MambaWeights


def patchify_ref(frame: np.ndarray, patch: int) -> np.ndarray:
    C, H, W = frame.shape
    x = frame.reshape(C, H // patch, patch, W // patch, patch)
    return x.transpose(1, 3, 0, 2, 4).reshape((H // patch) * (W // patch), C * patch * patch)


def conv1d_causal_ref(tokens: np.ndarray, kernels: np.ndarray, bias=None) -> np.ndarray:
    L, C = tokens.shape
    K = kernels.shape[1]
    out = np.zeros((L, C))
    for t in range(L):
        for j in range(min(K, t + 1)):
            out[t] += kernels[:, j] * tokens[t - j]
    if bias is not None:
        out += bias
    return out


def _record(trace, name, value):
    if trace is not None:
        trace.setdefault(name, []).append(np.asarray(value, dtype=np.float64))


def ssm_scan_ref(xs: np.ndarray, w: dict, prefix: str, trace=None) -> np.ndarray:
    A = w[prefix + "A"]
    ED, N = A.shape
    h = np.zeros((ED, N))
    ys = []
    for x_t in xs:
        delta_raw = w[prefix + "dt_proj.weight"] @ x_t + w[prefix + "dt_proj.bias"]
        b_t = w[prefix + "b_proj.weight"] @ x_t + w[prefix + "b_proj.bias"]
        c_t = w[prefix + "c_proj.weight"] @ x_t + w[prefix + "c_proj.bias"]
        delta = np.maximum(delta_raw, 0.0)
        z = delta[:, None] * A
        abar = exp_ref(z)
        bbar = delta[:, None] * b_t[None, :]
        h = abar * h + bbar * x_t[:, None]
        y = h @ c_t + w[prefix + "D"] * x_t
        _record(trace, prefix + "dt", delta_raw)
        _record(trace, prefix + "b", b_t)
        _record(trace, prefix + "c", c_t)
        # values outside the exp domain saturate; they need no grid coverage
        _record(trace, prefix + "z", np.clip(z, -4.0, 1.0))
        _record(trace, prefix + "bbar", bbar)
        _record(trace, prefix + "h", h)
        ys.append(y)
    return np.array(ys)


def block_forward_ref(x: np.ndarray, w: dict, index: int, trace=None) -> np.ndarray:
    p = f"blocks.{index}."
    n = range_norm_ref(x, NormParams(w[p + "norm.gamma"], w[p + "norm.beta"]))
    gate_lin = n @ w[p + "gate_proj.weight"].T + w[p + "gate_proj.bias"]
    gate = silu_ref(gate_lin)
    u = n @ w[p + "in_proj.weight"].T + w[p + "in_proj.bias"]
    conv = conv1d_causal_ref(u, w[p + "conv.weight"], w[p + "conv.bias"])
    xs = silu_ref(conv)
    y = ssm_scan_ref(xs, w, p, trace)
    gated = y * gate
    out = gated @ w[p + "out_proj.weight"].T + w[p + "out_proj.bias"]
    res = x + out
    for name, value in (("norm", n), ("gate_lin", gate_lin), ("gate", gate), ("in", u),
                        ("conv", conv), ("xs", xs), ("y", y), ("gated", gated),
                        ("out", out), ("res", res)):
        _record(trace, p + name, value)
    return res


def model_forward_ref(frame, config: MambaConfig, weights: MambaWeights, trace=None) -> np.ndarray:
    """Float prediction vector for one ``(C, H, W)`` frame.

    If ``trace`` is a dict, every named activation is appended to it (this is
    what calibration consumes).
    """
    w = {k: np.asarray(v, dtype=np.float64) for k, v in weights.real.items()}
    frame = np.asarray(frame, dtype=np.float64)
    _record(trace, "frame", frame)
    tokens = patchify_ref(frame, config.P)
    x = tokens @ w["embed.weight"].T + w["embed.bias"]
    _record(trace, "embed", x)
    for i in range(config.M):
        x = block_forward_ref(x, w, i, trace)
    pooled = x.mean(axis=0)
    _record(trace, "pool", pooled)
    if config.head_hidden:
        hidden = np.maximum(w["head.hidden.weight"] @ pooled + w["head.hidden.bias"], 0.0)
        _record(trace, "head.hidden", hidden)
        pooled = hidden
    out = w["head.out.weight"] @ pooled + w["head.out.bias"]
    _record(trace, "head.out", out)
    return out
