"""Integer kernels of the Mamba block.

All tensors are :class:`~intmamba.qnum.QTensor`. Products and sums are formed
exactly in int64 and narrowed once, with rounding and saturation, to the
calibrated output scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import qnum
from ..approx import QuantizedPiecewise, eval_piecewise, relu_softplus
from ..errors import ConfigError, StateOverflowError
from ..qnum import QTensor

# Fixed scale of the discretized decay A-bar; the stored state drops exactly
# these 7 fractional bits after every step.
ABAR_SCALE_EXP = -7


def patchify(frame: QTensor, patch: int) -> QTensor:
    """Split a ``(C, H, W)`` frame into raster-ordered, flattened ``P x P`` patches.

    Returns ``(L, C*P*P)`` with each patch laid out channel-major.
    """
    if frame.data.ndim != 3:
        raise ConfigError(f"frame must be (C, H, W), got shape {frame.shape}")
    C, H, W = frame.shape
    if H % patch or W % patch:
        raise ConfigError(f"frame {H}x{W} is not divisible by patch size {patch}")
    x = frame.data.reshape(C, H // patch, patch, W // patch, patch)
    x = x.transpose(1, 3, 0, 2, 4).reshape((H // patch) * (W // patch), C * patch * patch)
    return QTensor(x, frame.bits, frame.scale_exp)


def _narrow(acc: np.ndarray, acc_exp: int, out_scale_exp: int, out_bits: int) -> QTensor:
    return qnum.requantize(QTensor(acc, qnum.MAX_WIDE_BITS, acc_exp), out_scale_exp, out_bits)


def linear(
    x: QTensor,
    weight: QTensor,
    bias: QTensor | None,
    out_scale_exp: int,
    out_bits: int = 8,
) -> QTensor:
    """``x @ W.T + b`` over the last axis of ``x``; ``W`` is ``(out, in)``."""
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ConfigError(f"linear: input {x.shape} does not match weight {weight.shape}")
    acc_exp = x.scale_exp + weight.scale_exp
    acc = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ConfigError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        acc = acc + qnum.align(bias, acc_exp)
    return _narrow(acc, acc_exp, out_scale_exp, out_bits)


def conv1d_causal(
    tokens: QTensor,
    kernels: QTensor,
    bias: QTensor | None,
    out_scale_exp: int,
    out_bits: int = 8,
) -> QTensor:
    """Depthwise causal convolution, ``y[t, c] = sum_j k[c, j] * x[t - j, c]``.

    ``tokens`` is ``(L, C)``, ``kernels`` is ``(C, K)``; positions before the
    first token read as zero.
    """
    L, C = tokens.shape
    if kernels.shape[0] != C:
        raise ConfigError(f"conv1d: {C} channels but kernels {kernels.shape}")
    K = kernels.shape[1]
    padded = np.vstack([np.zeros((K - 1, C), dtype=np.int64), tokens.data])
    acc = np.zeros((L, C), dtype=np.int64)
    for j in range(K):
        acc += kernels.data[:, j] * padded[K - 1 - j:K - 1 - j + L]
    acc_exp = tokens.scale_exp + kernels.scale_exp
    if bias is not None:
        acc = acc + qnum.align(bias, acc_exp)
    return _narrow(acc, acc_exp, out_scale_exp, out_bits)


def add(a: QTensor, b: QTensor, out_scale_exp: int, out_bits: int = 8) -> QTensor:
    """Sum at matched scales (the finer of the two), then narrow."""
    exp = min(a.scale_exp, b.scale_exp)
    return _narrow(qnum.align(a, exp) + qnum.align(b, exp), exp, out_scale_exp, out_bits)


def multiply(a: QTensor, b: QTensor, out_scale_exp: int, out_bits: int = 8) -> QTensor:
    prod = qnum.fixed_mul(a, b, min(a.bits + b.bits, qnum.MAX_WIDE_BITS))
    return qnum.requantize(prod, out_scale_exp, out_bits)


def mean_pool(tokens: QTensor, out_scale_exp: int, out_bits: int = 8) -> QTensor:
    """Mean over the token axis with a single rounding division."""
    L = tokens.shape[0]
    total = tokens.data.sum(axis=0)
    shift = tokens.scale_exp - out_scale_exp
    if shift >= 0:
        mean = qnum.rdiv(total << shift, L)
    else:
        mean = qnum.rdiv(total, L << -shift)
    return QTensor(qnum.saturate(mean, out_bits), out_bits, out_scale_exp)


def discretize(
    delta_raw: QTensor,
    b_t: QTensor,
    A: QTensor,
    exp_fn: QuantizedPiecewise,
    bbar_scale_exp: int,
    bits: int = 8,
) -> tuple[QTensor, QTensor, QTensor]:
    """Per-token discretization with ReLU step size and piecewise exponential.

    ``delta_raw`` is the ``(ED,)`` step-size projection, ``b_t`` the ``(N,)``
    input projection and ``A`` the ``(ED, N)`` decay matrix. Returns
    ``(abar, bbar, delta)`` where ``abar = exp(delta * A)`` at scale 2^-7 and
    ``bbar = delta * b_t``.
    """
    delta = relu_softplus(delta_raw)
    dcol = delta.reshape(-1, 1)
    z = qnum.fixed_mul(dcol, A, delta.bits + A.bits)
    # kept wide so inputs below the fitted domain hit the zero policy
    # instead of saturating onto the domain edge
    z = qnum.requantize(z, exp_fn.in_scale_exp, 2 * bits)
    abar = eval_piecewise(exp_fn, z)
    bbar = qnum.fixed_mul(dcol, b_t.reshape(1, -1), delta.bits + b_t.bits)
    bbar = qnum.requantize(bbar, bbar_scale_exp, bits)
    return abar, bbar, delta


@dataclass(frozen=True)
class SSMState:
    """Stored recurrent state: ``(ED, N)`` integers at ``h_bits - 7`` bits."""

    h: QTensor

    @property
    def scale_exp(self) -> int:
        return self.h.scale_exp

    @property
    def bits(self) -> int:
        return self.h.bits

    @classmethod
    def zeros(cls, ED: int, N: int, scale_exp: int, h_bits: int = 24,
              abar_scale_exp: int = ABAR_SCALE_EXP) -> "SSMState":
        return cls(QTensor(np.zeros((ED, N), dtype=np.int64), h_bits + abar_scale_exp, scale_exp))


def ssm_step(
    state: SSMState,
    x_t: QTensor,
    abar: QTensor,
    bbar: QTensor,
    c_t: QTensor,
    d_skip: QTensor,
    y_scale_exp: int,
    out_bits: int = 8,
    h_bits: int = 24,
) -> tuple[QTensor, SSMState]:
    """One recurrence step.

    ``h_t = abar * h_{t-1} + bbar * x_t`` is formed at ``h_bits``;
    ``y_t = sum_N(c_t * h_t) + d_skip * x_t`` uses that full-width ``h_t``.
    The returned state is ``h_t`` shifted right by the fractional bits of
    ``abar`` so neither its width nor its scale grows over time.

    Raises:
        StateOverflowError: ``h_t`` does not fit in ``h_bits`` (mis-calibrated scales).
    """
    shift = -abar.scale_exp
    if shift <= 0:
        raise ConfigError("abar must carry fractional bits (negative scale exponent)")
    h_exp = state.scale_exp + abar.scale_exp
    decayed = abar.data * state.h.data
    drive = QTensor(bbar.data * x_t.data[:, None], qnum.MAX_WIDE_BITS, bbar.scale_exp + x_t.scale_exp)
    h = decayed + qnum.align(drive, h_exp)
    lim = 1 << (h_bits - 1)
    if h.size and (h.max() >= lim or h.min() < -lim):
        raise StateOverflowError(
            f"SSM state overflow: |h| reached {int(np.abs(h).max())} >= 2^{h_bits - 1}"
        )
    h_full = QTensor(h, h_bits, h_exp)

    y_exp = min(c_t.scale_exp + h_exp, d_skip.scale_exp + x_t.scale_exp)
    ch = QTensor(h @ c_t.data, qnum.MAX_WIDE_BITS, c_t.scale_exp + h_exp)
    dx = QTensor(d_skip.data * x_t.data, qnum.MAX_WIDE_BITS, d_skip.scale_exp + x_t.scale_exp)
    y = _narrow(qnum.align(ch, y_exp) + qnum.align(dx, y_exp), y_exp, y_scale_exp, out_bits)

    stored = qnum.requant_shift(h_full, shift, h_bits - shift)
    return y, SSMState(stored)


@dataclass(frozen=True)
class QBlock:
    """Deployed tensors, activation scales and approximations of one block."""

    tensors: dict
    scales: dict
    silu_gate: QuantizedPiecewise
    silu_main: QuantizedPiecewise
    exp: QuantizedPiecewise
    act_bits: int = 8
    h_bits: int = 24

    def __getitem__(self, name: str) -> QTensor:
        return self.tensors[name]


def ssm_scan(tokens: QTensor, block: QBlock, states: list | None = None) -> QTensor:
    """Fold :func:`ssm_step` over the sequence from a zero state.

    ``tokens`` is ``(L, ED)``; returns ``(L, ED)`` at the block's ``y`` scale.
    If ``states`` is a list, every stored state is appended to it.
    """
    s, bits = block.scales, block.act_bits
    A = block["A"]
    ED, N = A.shape
    state = SSMState.zeros(ED, N, s["h"], block.h_bits)
    outs = []
    for t in range(tokens.shape[0]):
        x_t = tokens[t]
        delta_raw = linear(x_t, block["dt_proj.weight"], block["dt_proj.bias"], s["dt"], bits)
        b_t = linear(x_t, block["b_proj.weight"], block["b_proj.bias"], s["b"], bits)
        c_t = linear(x_t, block["c_proj.weight"], block["c_proj.bias"], s["c"], bits)
        abar, bbar, _ = discretize(delta_raw, b_t, A, block.exp, s["bbar"], bits)
        y_t, state = ssm_step(state, x_t, abar, bbar, c_t, block["D"], s["y"], bits, block.h_bits)
        if states is not None:
            states.append(state)
        outs.append(y_t.data)
    return QTensor(np.stack(outs), bits, s["y"])
