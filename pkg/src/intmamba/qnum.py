"""Fixed-point numeric core.

Symmetric, power-of-two scaled integer tensors. A value ``q`` with scale
exponent ``s`` represents the real number ``q * 2**s``; the zero point is
always 0. Every narrowing operation saturates instead of wrapping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError

MIN_BITS = 2
MAX_BITS = 32
# Extended-precision tensors (SSM state products, wide accumulators) may exceed
# MAX_BITS; int64 storage bounds them here.
MAX_WIDE_BITS = 62
DEFAULT_SCALE_EXP = -7


def qrange(bits: int) -> tuple[int, int]:
    """Return ``(min_range, max_range)`` of a signed ``bits``-wide integer."""
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def saturate(values: np.ndarray, bits: int) -> np.ndarray:
    lo, hi = qrange(bits)
    return np.clip(np.asarray(values, dtype=np.int64), lo, hi)


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero (``np.round`` rounds ties to even)."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def rdiv(num: np.ndarray, den: int) -> np.ndarray:
    """Integer division rounding to nearest, ties away from zero (``den > 0``)."""
    num = np.asarray(num, dtype=np.int64)
    mag = (np.abs(num) + den // 2) // den
    return np.where(num < 0, -mag, mag)


def rshift_round(values: np.ndarray, shift: int) -> np.ndarray:
    """Round-to-nearest right shift: add ``2**(shift-1)`` then arithmetic shift."""
    values = np.asarray(values, dtype=np.int64)
    if shift <= 0:
        return values << -shift
    return (values + (1 << (shift - 1))) >> shift


@dataclass(frozen=True, eq=False)
class QTensor:
    """Integer tensor with a bit-width and power-of-two scale exponent."""

    data: np.ndarray
    bits: int
    scale_exp: int

    def __post_init__(self):
        if not MIN_BITS <= self.bits <= MAX_WIDE_BITS:
            raise ConfigError(f"bit-width {self.bits} outside [{MIN_BITS}, {MAX_WIDE_BITS}]")
        data = np.array(self.data, dtype=np.int64)
        lo, hi = qrange(self.bits)
        if data.size and (data.min() < lo or data.max() > hi):
            raise InvalidInputError(
                f"values [{data.min()}, {data.max()}] do not fit in {self.bits} bits"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scale_exp", int(self.scale_exp))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def zero_point(self) -> int:
        return 0

    @property
    def scale(self) -> float:
        return 2.0 ** self.scale_exp

    def __len__(self) -> int:
        return len(self.data)

    def __getitem__(self, index) -> "QTensor":
        return QTensor(self.data[index], self.bits, self.scale_exp)

    def reshape(self, *shape) -> "QTensor":
        return QTensor(self.data.reshape(*shape), self.bits, self.scale_exp)

    def equals(self, other: "QTensor") -> bool:
        return (
            self.bits == other.bits
            and self.scale_exp == other.scale_exp
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self) -> str:
        return f"QTensor(shape={self.shape}, bits={self.bits}, scale=2^{self.scale_exp})"


def _check_bits(bits: int, upper: int = MAX_BITS) -> None:
    if not MIN_BITS <= bits <= upper:
        raise ConfigError(f"bit-width {bits} outside [{MIN_BITS}, {upper}]")


def quantize(x, scale_exp: int, bits: int) -> QTensor:
    """Map reals to ``clamp(round(x / 2**scale_exp), -2**(b-1), 2**(b-1)-1)``."""
    _check_bits(bits)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("quantize: input contains non-finite values")
    # ldexp is exact for power-of-two scaling
    q = round_half_away(np.ldexp(x, -int(scale_exp)))
    lo, hi = qrange(bits)
    return QTensor(np.clip(q, lo, hi).astype(np.int64), bits, scale_exp)


def dequantize(q: QTensor) -> np.ndarray:
    return np.ldexp(q.data.astype(np.float64), q.scale_exp)


def fits(value: float, scale_exp: int, bits: int) -> bool:
    """True if ``value`` quantizes at ``scale_exp`` without clipping."""
    lo, hi = qrange(bits)
    q = round_half_away(np.ldexp(float(value), -scale_exp))
    return lo <= q <= hi


def calibrate_scale(
    samples,
    bits: int,
    coverage: float = 1.0,
    default: int = DEFAULT_SCALE_EXP,
) -> int:
    """Smallest scale exponent whose grid holds the ``coverage``-quantile of ``|samples|``.

    Values above the quantile are left to saturate (outlier clipping). All-zero
    input has no magnitude to cover and returns ``default``.
    """
    _check_bits(bits, MAX_WIDE_BITS)
    if not 0.0 < coverage <= 1.0:
        raise ConfigError(f"coverage must lie in (0, 1], got {coverage}")
    mags = np.abs(np.asarray(samples, dtype=np.float64)).ravel()
    if mags.size == 0:
        raise InvalidInputError("calibrate_scale: empty sample set")
    if not np.all(np.isfinite(mags)):
        raise InvalidInputError("calibrate_scale: samples contain non-finite values")
    v = float(np.quantile(mags, coverage, method="inverted_cdf"))
    if v == 0.0:
        return default
    # first guess from log2, then settle on the exact boundary
    s = int(np.floor(np.log2(v))) - (bits - 1)
    while not fits(v, s, bits):
        s += 1
    while fits(v, s - 1, bits):
        s -= 1
    return s


def requant_shift(q: QTensor, shift: int, out_bits: int) -> QTensor:
    """Divide by ``2**shift`` with round-to-nearest and saturate to ``out_bits``."""
    if shift < 0:
        raise ConfigError(f"shift must be non-negative, got {shift}")
    if out_bits > q.bits:
        raise ConfigError(f"out_bits {out_bits} wider than input bits {q.bits}")
    data = saturate(rshift_round(q.data, shift), out_bits)
    return QTensor(data, out_bits, q.scale_exp + shift)


def requantize(q: QTensor, scale_exp: int, bits: int) -> QTensor:
    """Move ``q`` to another power-of-two scale (either direction) and width.

    Coarsening rounds to nearest; refining is an exact left shift. Both saturate.
    """
    shift = scale_exp - q.scale_exp
    if shift >= 0:
        data = rshift_round(q.data, shift)
    else:
        # clip before shifting so the left shift cannot overflow int64
        lim = 1 << max(0, 62 - (-shift))
        data = np.clip(q.data, -lim, lim) << (-shift)
    return QTensor(saturate(data, bits), bits, scale_exp)


def align(q: QTensor, scale_exp: int, bits: int = MAX_WIDE_BITS) -> np.ndarray:
    """Integer payload of ``q`` expressed at ``scale_exp`` (wide, saturating)."""
    return requantize(q, scale_exp, bits).data


def fixed_mul(a: QTensor, b: QTensor, acc_bits: int) -> QTensor:
    """Exact element-wise product; the result scale is the sum of operand scales."""
    if acc_bits < a.bits + b.bits:
        raise ConfigError(
            f"accumulator of {acc_bits} bits cannot hold a {a.bits}x{b.bits}-bit product"
        )
    if acc_bits > MAX_WIDE_BITS:
        raise ConfigError(f"accumulator wider than {MAX_WIDE_BITS} bits is not supported")
    try:
        data = np.multiply(a.data, b.data)
    except ValueError as exc:
        raise ConfigError(f"fixed_mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return QTensor(data, acc_bits, a.scale_exp + b.scale_exp)
