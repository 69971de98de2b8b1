"""Shared fixtures: random tiny models and exact-integer oracles."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from intmamba.mamba import MambaConfig, init_weights, model_forward, model_forward_ref, quantize_model


def random_tiny_config(rng: np.random.Generator) -> MambaConfig:
    """ED <= 8, N <= 4, L <= 4 with 0..2 blocks."""
    D = int(rng.integers(2, 5))
    E = int(rng.integers(1, 3))
    N = int(rng.integers(1, 5))
    M = int(rng.integers(0, 3))
    H = 2 * int(rng.integers(1, 3))
    W = 2 * int(rng.integers(1, 3))
    return MambaConfig(D=D, E=E, P=2, N=N, M=M, in_channels=1, in_height=H, in_width=W, out_dim=3)


def random_tiny_model(rng: np.random.Generator, n_frames: int = 8):
    """Returns ``(model, weights, frames)`` calibrated on its own frames."""
    cfg = random_tiny_config(rng)
    weights = init_weights(cfg, rng)
    frames = rng.normal(size=(n_frames,) + cfg.frame_shape)
    return quantize_model(cfg, weights, frames), weights, frames


def output_error_lsb(model, weights, frames) -> float:
    """Largest |quantized - float| over frames and outputs, in output LSBs."""
    lsb = 2.0 ** model.weights.act_scales["head.out"]
    worst = 0.0
    for f in frames:
        diff = np.abs(model_forward(f, model) - model_forward_ref(f, model.config, weights))
        worst = max(worst, float(diff.max()) / lsb)
    return worst


def round_shift(v: int, shift: int) -> int:
    """floor(v / 2^shift + 1/2) in exact rational arithmetic."""
    return int((Fraction(v, 2 ** shift) + Fraction(1, 2)).__floor__())


def clamp(v: int, bits: int) -> int:
    return max(-(1 << (bits - 1)), min((1 << (bits - 1)) - 1, v))


def requant_exact(v: int, from_exp: int, to_exp: int, bits: int) -> int:
    shift = to_exp - from_exp
    v = round_shift(v, shift) if shift >= 0 else v * 2 ** (-shift)
    return clamp(v, bits)
