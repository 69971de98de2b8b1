"""Patch-token Mamba model: integer path, float reference, calibration, storage."""

from .calibrate import quantize_model
from .container import load_model, load_tensor, save_model, save_tensor
from .config import CIFAR10, FASHION_MNIST, MARS, PRESETS, MambaConfig
from .layers import (
    ABAR_SCALE_EXP, QBlock, SSMState, add, conv1d_causal, discretize, linear, mean_pool, multiply,
    patchify, ssm_scan, ssm_step,
)
from .model import Model, mamba_block_forward, model_forward, model_forward_q, predict
from .reference import model_forward_ref
from .weights import MambaWeights, init_weights, tensor_shapes, zero_weights

__all__ = [
    "ABAR_SCALE_EXP", "CIFAR10", "FASHION_MNIST", "MARS", "PRESETS", "MambaConfig",
    "MambaWeights", "Model", "QBlock", "SSMState", "add", "conv1d_causal", "discretize",
    "init_weights", "linear", "load_model", "load_tensor", "mamba_block_forward", "mean_pool", "model_forward", "multiply",
    "model_forward_q", "model_forward_ref", "patchify", "predict", "quantize_model", "save_model", "save_tensor",
    "ssm_scan", "ssm_step", "tensor_shapes", "zero_weights",
]
