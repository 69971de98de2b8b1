from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from ..errors import ConfigError


@dataclass(frozen=True)
class MambaConfig:
    """Architecture hyperparameters of a patch-token Mamba model.

    ``D`` token dimension, ``E`` expansion factor, ``P`` patch size, ``N`` state
    dimension, ``M`` number of blocks, ``K`` causal conv width. The sequence
    length ``L`` follows from the frame geometry and ``P``.
    """

    D: int
    E: int
    P: int
    N: int
    M: int
    K: int = 4
    in_channels: int = 1
    in_height: int = 8
    in_width: int = 8
    out_dim: int = 1
    head_hidden: int = 0
    h_bits: int = 24
    act_bits: int = 8
    weight_bits: int = 8

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{f.name} must be an integer, got {v!r}")
            lower = 0 if f.name in ("M", "head_hidden") else 1
            if v < lower:
                raise ConfigError(f"{f.name} must be >= {lower}, got {v}")
        if self.in_height % self.P or self.in_width % self.P:
            raise ConfigError(
                f"frame {self.in_height}x{self.in_width} is not divisible by patch size {self.P}"
            )
        if not 2 <= self.act_bits <= 32 or not 2 <= self.weight_bits <= 32:
            raise ConfigError("act_bits and weight_bits must lie in [2, 32]")
        if self.h_bits - 7 < self.act_bits or self.h_bits > 48:
            raise ConfigError(f"h_bits={self.h_bits} is outside the supported range")

    @property
    def ED(self) -> int:
        return self.E * self.D

    @property
    def L(self) -> int:
        return (self.in_height // self.P) * (self.in_width // self.P)

    @property
    def patch_dim(self) -> int:
        return self.P * self.P * self.in_channels

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.in_height, self.in_width)

    def key(self) -> tuple[int, int, int, int, int]:
        return (self.D, self.E, self.P, self.N, self.M)

    def replace(self, **changes) -> "MambaConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MambaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


# Reported model configurations. The head width of the MARS entry is a local
# choice; the frame geometry follows the 8x8x5 point-cloud feature map.
MARS = MambaConfig(D=20, E=2, P=2, N=8, M=2, in_channels=5, in_height=8, in_width=8,
                   out_dim=57, head_hidden=64)
FASHION_MNIST = MambaConfig(D=24, E=2, P=2, N=16, M=4, in_channels=1, in_height=28,
                            in_width=28, out_dim=10)
CIFAR10 = MambaConfig(D=64, E=2, P=4, N=32, M=4, in_channels=3, in_height=32,
                      in_width=32, out_dim=10)

PRESETS = {"mars": MARS, "fashion-mnist": FASHION_MNIST, "cifar10": CIFAR10}
