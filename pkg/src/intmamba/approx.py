"""Hardware-friendly nonlinearities.

Piecewise-linear fitting and integer evaluation (SiLU, exp), range
normalization with a fixed-point reciprocal, ReLU in place of Softplus, and the
exact floating-point references the approximations are measured against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import qnum
from .errors import ConfigError, FitError, ParseError
from .qnum import QTensor

# Absolute floor of the relative-error metric; keeps the bound attainable at
# zeros of the target function (SiLU(0) = 0).
REL_ERROR_FLOOR = 0.02
MAX_SEGMENTS = 64
# Breakpoints are placed on this dyadic grid, errors are checked on a finer one.
BREAKPOINT_STEP = 2.0 ** -6
CHECK_STEP = 2.0 ** -12
# Extra fractional bits carried by quantized slopes/intercepts.
COEF_EXTRA_BITS = 24
RECIP_FRAC_BITS = 16
# The token mean keeps fractional bits: rounding it to an integer shifts the
# normalized output by up to 0.5 / range, which dominates for narrow tokens.
MEAN_FRAC_BITS = 8
NORM_PARAM_BITS = 16


# ---------------------------------------------------------------------------
# exact references
# ---------------------------------------------------------------------------

def silu_ref(x):
    x = np.asarray(x, dtype=np.float64)
    # x * sigmoid(x), written to avoid overflow in exp for large |x|
    return x * np.exp(-np.logaddexp(0.0, -x))


def exp_ref(x):
    return np.exp(np.asarray(x, dtype=np.float64))


def softplus_ref(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def identity_ref(x):
    return np.asarray(x, dtype=np.float64).copy()


ORACLES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "silu": silu_ref,
    "exp": exp_ref,
    "identity": identity_ref,
}


# ---------------------------------------------------------------------------
# piecewise-linear functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Policy:
    """Behaviour outside the fitted domain: ``constant`` or ``passthrough``."""

    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "passthrough"):
            raise ConfigError(f"unknown out-of-range policy {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "passthrough":
            return {"kind": "passthrough"}
        return {"kind": "constant", "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(d["kind"], float(d.get("value", 0.0)))


# out-of-range behaviour for the shipped approximations
DEFAULT_POLICIES = {
    "silu": (Policy("constant", 0.0), Policy("passthrough")),
    "exp": (Policy("constant", 0.0), Policy("constant", float(np.e))),
    "identity": (Policy("passthrough"), Policy("passthrough")),
}


def error_metric(approx: np.ndarray, exact: np.ndarray, metric: str) -> np.ndarray:
    diff = np.abs(approx - exact)
    if metric == "absolute":
        return diff
    if metric == "relative-with-floor":
        return diff / np.maximum(np.abs(exact), REL_ERROR_FLOOR)
    raise ConfigError(f"unknown error metric {metric!r}")


@dataclass(frozen=True)
class QuantizedPiecewise:
    """Integer form of a :class:`PiecewiseLinearFn` for fixed input/output scales.

    Segment ``j`` covers integer inputs ``x >= thresholds[j]`` (up to the next
    threshold) and evaluates ``(slopes[j] * x + intercepts[j])`` followed by a
    rounding right shift of ``shift`` bits.
    """

    in_scale_exp: int
    out_scale_exp: int
    out_bits: int
    shift: int
    thresholds: tuple[int, ...]
    slopes: tuple[int, ...]
    intercepts: tuple[int, ...]
    lo: int
    hi: int
    below: tuple[str, int]
    above: tuple[str, int]

    def to_dict(self) -> dict:
        return {
            "in_scale_exp": self.in_scale_exp,
            "out_scale_exp": self.out_scale_exp,
            "out_bits": self.out_bits,
            "shift": self.shift,
            "thresholds": list(self.thresholds),
            "slopes": list(self.slopes),
            "intercepts": list(self.intercepts),
            "lo": self.lo,
            "hi": self.hi,
            "below": list(self.below),
            "above": list(self.above),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizedPiecewise":
        return cls(
            in_scale_exp=int(d["in_scale_exp"]),
            out_scale_exp=int(d["out_scale_exp"]),
            out_bits=int(d["out_bits"]),
            shift=int(d["shift"]),
            thresholds=tuple(int(v) for v in d["thresholds"]),
            slopes=tuple(int(v) for v in d["slopes"]),
            intercepts=tuple(int(v) for v in d["intercepts"]),
            lo=int(d["lo"]),
            hi=int(d["hi"]),
            below=(d["below"][0], int(d["below"][1])),
            above=(d["above"][0], int(d["above"][1])),
        )


@dataclass(frozen=True)
class PiecewiseLinearFn:
    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]
    below: Policy
    above: Policy
    name: str = ""
    max_err: float | None = None
    metric: str | None = None
    achieved_err: float | None = None
    quantized_forms: tuple[QuantizedPiecewise, ...] = field(default=(), compare=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        if len(bp) < 2 or not np.all(np.diff(bp) > 0):
            raise ConfigError("breakpoints must be strictly increasing with at least 2 entries")
        k = len(bp) - 1
        if len(self.slopes) != k or len(self.intercepts) != k:
            raise ConfigError(f"{k} segments need {k} slopes and intercepts")

    @property
    def n_segments(self) -> int:
        return len(self.slopes)

    @property
    def domain(self) -> tuple[float, float]:
        return self.breakpoints[0], self.breakpoints[-1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        bp = np.asarray(self.breakpoints)
        idx = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, self.n_segments - 1)
        y = np.asarray(self.slopes)[idx] * x + np.asarray(self.intercepts)[idx]
        lo, hi = self.domain
        y = np.where(x < lo, _apply_policy_real(self.below, x), y)
        y = np.where(x > hi, _apply_policy_real(self.above, x), y)
        return y

    def quantize(self, in_scale_exp: int, out_scale_exp: int, out_bits: int = 8) -> QuantizedPiecewise:
        """Integer coefficients for inputs at ``2**in_scale_exp`` and outputs at ``2**out_scale_exp``."""
        for qf in self.quantized_forms:
            if (qf.in_scale_exp, qf.out_scale_exp, qf.out_bits) == (in_scale_exp, out_scale_exp, out_bits):
                return qf
        acc_exp = min(in_scale_exp, out_scale_exp) - COEF_EXTRA_BITS
        frac = in_scale_exp - acc_exp
        shift = out_scale_exp - acc_exp
        slopes = [int(qnum.round_half_away(np.ldexp(m, frac))) for m in self.slopes]
        intercepts = [int(qnum.round_half_away(np.ldexp(c, -acc_exp))) for c in self.intercepts]
        # x_int >= ceil(bp / 2^s)  <=>  x_int * 2^s >= bp, so segment choice is exact
        thresholds = [int(np.ceil(np.ldexp(b, -in_scale_exp))) for b in self.breakpoints[:-1]]
        lo = thresholds[0]
        hi = int(np.floor(np.ldexp(self.breakpoints[-1], -in_scale_exp)))
        return QuantizedPiecewise(
            in_scale_exp=in_scale_exp,
            out_scale_exp=out_scale_exp,
            out_bits=out_bits,
            shift=shift,
            thresholds=tuple(thresholds),
            slopes=tuple(slopes),
            intercepts=tuple(intercepts),
            lo=lo,
            hi=hi,
            below=_quantize_policy(self.below, out_scale_exp, out_bits),
            above=_quantize_policy(self.above, out_scale_exp, out_bits),
        )

    def with_quantized(self, *forms: QuantizedPiecewise) -> "PiecewiseLinearFn":
        kept = tuple(self.quantized_forms) + tuple(forms)
        return PiecewiseLinearFn(
            self.breakpoints, self.slopes, self.intercepts, self.below, self.above,
            self.name, self.max_err, self.metric, self.achieved_err, kept,
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "intmamba.piecewise/1",
            "name": self.name,
            "breakpoints": list(self.breakpoints),
            "slopes": list(self.slopes),
            "intercepts": list(self.intercepts),
            "below": self.below.to_dict(),
            "above": self.above.to_dict(),
            "max_err": self.max_err,
            "metric": self.metric,
            "achieved_err": self.achieved_err,
            "n_segments": self.n_segments,
            "quantized": [qf.to_dict() for qf in self.quantized_forms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLinearFn":
        try:
            return cls(
                breakpoints=tuple(float(v) for v in d["breakpoints"]),
                slopes=tuple(float(v) for v in d["slopes"]),
                intercepts=tuple(float(v) for v in d["intercepts"]),
                below=Policy.from_dict(d["below"]),
                above=Policy.from_dict(d["above"]),
                name=d.get("name", ""),
                max_err=d.get("max_err"),
                metric=d.get("metric"),
                achieved_err=d.get("achieved_err"),
                quantized_forms=tuple(QuantizedPiecewise.from_dict(q) for q in d.get("quantized", [])),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ParseError(f"malformed piecewise-linear document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PiecewiseLinearFn":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(d)


def _apply_policy_real(policy: Policy, x: np.ndarray) -> np.ndarray:
    if policy.kind == "passthrough":
        return x
    return np.full_like(x, policy.value)


def _quantize_policy(policy: Policy, out_scale_exp: int, out_bits: int) -> tuple[str, int]:
    if policy.kind == "passthrough":
        return ("passthrough", 0)
    return ("constant", int(qnum.quantize([policy.value], out_scale_exp, out_bits).data[0]))


def fit_piecewise(
    oracle: str,
    domain: tuple[float, float],
    max_err: float,
    metric: str = "relative-with-floor",
    *,
    step: float = BREAKPOINT_STEP,
    check_step: float = CHECK_STEP,
    max_segments: int = MAX_SEGMENTS,
    policies: tuple[Policy, Policy] | None = None,
) -> PiecewiseLinearFn:
    """Greedy left-to-right secant fit of ``oracle`` on ``domain``.

    Each segment is the chord between its endpoints and is extended one
    ``step`` at a time until the error bound breaks on the ``check_step``
    grid; the last passing endpoint becomes the breakpoint.
    """
    if oracle not in ORACLES:
        raise ConfigError(f"unknown oracle {oracle!r}; expected one of {sorted(ORACLES)}")
    lo, hi = float(domain[0]), float(domain[1])
    if not lo < hi:
        raise ConfigError(f"empty domain [{lo}, {hi}]")
    if max_err <= 0:
        raise ConfigError("max_err must be positive")
    f = ORACLES[oracle]
    ratio = step / check_step
    if ratio != int(ratio):
        raise ConfigError("step must be an integer multiple of check_step")
    ratio = int(ratio)

    n_fine = int(np.ceil((hi - lo) / check_step))
    xs = lo + check_step * np.arange(n_fine + 1)
    xs[-1] = hi
    fx = f(xs)

    def seg_error(i0: int, i1: int) -> float:
        slope = (fx[i1] - fx[i0]) / (xs[i1] - xs[i0])
        line = fx[i0] + slope * (xs[i0:i1 + 1] - xs[i0])
        return float(np.max(error_metric(line, fx[i0:i1 + 1], metric)))

    cuts = [0]
    worst = 0.0
    i0 = 0
    while i0 < n_fine:
        if len(cuts) > max_segments:
            raise FitError(
                f"{oracle}: more than {max_segments} segments needed for max_err={max_err}",
                achieved_error=worst,
            )
        best = None
        best_err = 0.0
        i1 = min(i0 + ratio, n_fine)
        while True:
            err = seg_error(i0, i1)
            if err > max_err:
                break
            best, best_err = i1, err
            if i1 == n_fine:
                break
            i1 = min(i1 + ratio, n_fine)
        if best is None:
            raise FitError(
                f"{oracle}: a single {step}-wide segment at x={xs[i0]:.6g} already "
                f"exceeds max_err={max_err} (error {err:.4g})",
                achieved_error=err,
            )
        worst = max(worst, best_err)
        cuts.append(best)
        i0 = best

    bps = xs[cuts]
    slopes, intercepts = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = (fx[b] - fx[a]) / (xs[b] - xs[a])
        slopes.append(float(m))
        intercepts.append(float(fx[a] - m * xs[a]))
    below, above = policies or DEFAULT_POLICIES[oracle]
    return PiecewiseLinearFn(
        breakpoints=tuple(float(b) for b in bps),
        slopes=tuple(slopes),
        intercepts=tuple(intercepts),
        below=below,
        above=above,
        name=oracle,
        max_err=float(max_err),
        metric=metric,
        achieved_err=worst,
    )


def max_error(fn: PiecewiseLinearFn, oracle: str, n_points: int = 100_000) -> float:
    """Largest metric error of ``fn`` against ``oracle`` on a uniform grid over its domain."""
    lo, hi = fn.domain
    x = np.linspace(lo, hi, n_points)
    return float(np.max(error_metric(fn(x), ORACLES[oracle](x), fn.metric or "absolute")))


@lru_cache(maxsize=None)
def silu_approx() -> PiecewiseLinearFn:
    """SiLU on [-7, 7] at 3 % (relative, floored); zero below, identity above."""
    return fit_piecewise("silu", (-7.0, 7.0), 0.03, "relative-with-floor")


@lru_cache(maxsize=None)
def exp_approx() -> PiecewiseLinearFn:
    """exp on [-4, 1] at 3 % (relative, floored); zero below, e above."""
    return fit_piecewise("exp", (-4.0, 1.0), 0.03, "relative-with-floor")


def eval_piecewise(fn: QuantizedPiecewise, x: QTensor) -> QTensor:
    """Integer evaluation: threshold search, multiply-add, rounding shift, saturation."""
    if x.scale_exp != fn.in_scale_exp:
        raise ConfigError(
            f"piecewise form expects input scale 2^{fn.in_scale_exp}, got 2^{x.scale_exp}"
        )
    xi = x.data
    idx = np.clip(np.searchsorted(np.asarray(fn.thresholds), xi, side="right") - 1, 0, len(fn.slopes) - 1)
    acc = np.asarray(fn.slopes, dtype=np.int64)[idx] * xi + np.asarray(fn.intercepts, dtype=np.int64)[idx]
    y = qnum.rshift_round(acc, fn.shift)
    y = np.where(xi < fn.lo, _apply_policy_int(fn.below, x, fn), y)
    y = np.where(xi > fn.hi, _apply_policy_int(fn.above, x, fn), y)
    return QTensor(qnum.saturate(y, fn.out_bits), fn.out_bits, fn.out_scale_exp)


def _apply_policy_int(policy: tuple[str, int], x: QTensor, fn: QuantizedPiecewise) -> np.ndarray:
    kind, value = policy
    if kind == "passthrough":
        return qnum.align(x, fn.out_scale_exp, qnum.MAX_WIDE_BITS)
    return np.full(x.shape, value, dtype=np.int64)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormParams:
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64).ravel()
        b = np.asarray(self.beta, dtype=np.float64).ravel()
        if g.shape != b.shape:
            raise ConfigError(f"gamma {g.shape} and beta {b.shape} lengths differ")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class QNormParams:
    gamma: QTensor
    beta: QTensor


def quantize_norm_params(params: NormParams, bits: int = NORM_PARAM_BITS) -> QNormParams:
    return QNormParams(
        gamma=qnum.quantize(params.gamma, qnum.calibrate_scale(params.gamma, bits), bits),
        beta=qnum.quantize(params.beta, qnum.calibrate_scale(params.beta, bits), bits),
    )


def range_norm(
    x: QTensor,
    params: NormParams | QNormParams,
    out_scale_exp: int,
    out_bits: int = 8,
) -> QTensor:
    """Integer range normalization over the last axis.

    ``gamma * (x - mean) / (max(x) - min(x)) + beta`` in integer arithmetic:
    the mean is held at 8 fractional bits, the reciprocal of the range at 16.
    A zero range yields ``beta``.
    """
    if isinstance(params, NormParams):
        params = quantize_norm_params(params)
    g, b = params.gamma, params.beta
    n = x.shape[-1]
    if g.shape[-1] != n or b.shape[-1] != n:
        raise ConfigError(f"norm parameters have {g.shape[-1]} features, input has {n}")

    xi = x.data
    mu = qnum.rdiv(xi.sum(axis=-1, keepdims=True) << MEAN_FRAC_BITS, n)
    centered = (xi << MEAN_FRAC_BITS) - mu
    rng = xi.max(axis=-1, keepdims=True) - xi.min(axis=-1, keepdims=True)
    recip = np.where(rng > 0, qnum.rdiv(np.int64(1) << RECIP_FRAC_BITS, np.maximum(rng, 1)), 0)
    normed = qnum.rshift_round(centered * recip, MEAN_FRAC_BITS)  # scale 2^-16, dimensionless

    acc_exp = g.scale_exp - RECIP_FRAC_BITS
    acc = normed * g.data + qnum.align(b, acc_exp)
    out = qnum.requantize(QTensor(acc, qnum.MAX_WIDE_BITS, acc_exp), out_scale_exp, out_bits)
    flat_beta = np.broadcast_to(qnum.requantize(b, out_scale_exp, out_bits).data, xi.shape)
    data = np.where(rng > 0, out.data, flat_beta)
    return QTensor(data, out_bits, out_scale_exp)


def range_norm_ref(x, params: NormParams) -> np.ndarray:
    """Floating-point range normalization (real mean, exact division)."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=-1, keepdims=True)
    rng = centered.max(axis=-1, keepdims=True) - centered.min(axis=-1, keepdims=True)
    safe = np.where(rng > 0, rng, 1.0)
    normed = np.where(rng > 0, centered / safe, 0.0)
    return params.gamma * normed + params.beta


def layer_norm_ref(x, params: NormParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ConfigError("layer norm needs a feature dimension > 1")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    denom = np.sqrt(var + params.epsilon)
    normed = np.divide(x - mu, denom, out=np.zeros_like(x), where=denom > 0)
    return params.gamma * normed + params.beta


def relu_softplus(x: QTensor) -> QTensor:
    """ReLU standing in for Softplus; scale and width unchanged."""
    return QTensor(np.maximum(x.data, 0), x.bits, x.scale_exp)
