from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..qnum import QTensor
from .config import MambaConfig


def tensor_shapes(config: MambaConfig) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map of every learnable tensor."""
    D, ED, N, K = config.D, config.ED, config.N, config.K
    shapes: dict[str, tuple[int, ...]] = {
        "embed.weight": (D, config.patch_dim),
        "embed.bias": (D,),
    }
    for i in range(config.M):
        p = f"blocks.{i}."
        shapes.update({
            p + "norm.gamma": (D,),
            p + "norm.beta": (D,),
            p + "gate_proj.weight": (ED, D),
            p + "gate_proj.bias": (ED,),
            p + "in_proj.weight": (ED, D),
            p + "in_proj.bias": (ED,),
            p + "conv.weight": (ED, K),
            p + "conv.bias": (ED,),
            p + "dt_proj.weight": (ED, ED),
            p + "dt_proj.bias": (ED,),
            p + "b_proj.weight": (N, ED),
            p + "b_proj.bias": (N,),
            p + "c_proj.weight": (N, ED),
            p + "c_proj.bias": (N,),
            p + "A": (ED, N),
            p + "D": (ED,),
            p + "out_proj.weight": (D, ED),
            p + "out_proj.bias": (D,),
        })
    if config.head_hidden:
        H = config.head_hidden
        shapes.update({
            "head.hidden.weight": (H, D),
            "head.hidden.bias": (H,),
            "head.out.weight": (config.out_dim, H),
            "head.out.bias": (config.out_dim,),
        })
    else:
        shapes.update({
            "head.out.weight": (config.out_dim, D),
            "head.out.bias": (config.out_dim,),
        })
    return shapes


@dataclass
class MambaWeights:
    """Named tensors of one model.

    ``real`` holds float32 reference values; ``quant`` the deployed integer
    tensors and ``act_scales`` the calibrated activation scale exponents. Both
    are empty for a float-only model.
    """

    real: dict[str, np.ndarray]
    quant: dict[str, QTensor] = field(default_factory=dict)
    act_scales: dict[str, int] = field(default_factory=dict)

    @property
    def is_quantized(self) -> bool:
        return bool(self.quant)

    def validate(self, config: MambaConfig) -> None:
        expected = tensor_shapes(config)
        for kind, store in (("real", self.real), ("quant", self.quant)):
            if not store:
                continue
            missing = sorted(set(expected) - set(store))
            if missing:
                raise ConfigError(f"{kind} weights missing tensors: {missing}")
            for name, shape in expected.items():
                if tuple(store[name].shape) != shape:
                    raise ConfigError(
                        f"{kind} tensor {name!r} has shape {tuple(store[name].shape)}, expected {shape}"
                    )


def init_weights(config: MambaConfig, rng: np.random.Generator | int | None = None) -> MambaWeights:
    """Random float weights with fan-in scaled uniform initialisation."""
    rng = np.random.default_rng(rng)
    real: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            v = rng.uniform(0.75, 1.25, shape)
        elif leaf == "beta":
            v = rng.uniform(-0.1, 0.1, shape)
        elif leaf == "A":
            # negative real decay rates, log-uniform in [0.25, 4]
            v = -np.exp(rng.uniform(np.log(0.25), np.log(4.0), shape))
        elif leaf == "D":
            v = rng.uniform(0.5, 1.5, shape)
        elif name.endswith("dt_proj.bias"):
            v = rng.uniform(0.0, 0.5, shape)
        elif leaf == "bias":
            v = rng.uniform(-0.1, 0.1, shape)
        else:
            fan_in = shape[-1]
            bound = 1.0 / np.sqrt(fan_in)
            v = rng.uniform(-bound, bound, shape)
        real[name] = np.asarray(v, dtype=np.float32)
    return MambaWeights(real=real)


def zero_weights(config: MambaConfig) -> MambaWeights:
    return MambaWeights(real={n: np.zeros(s, dtype=np.float32) for n, s in tensor_shapes(config).items()})
