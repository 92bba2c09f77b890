"""Parametric non-negative rate functions λ(t), tempered as λ(t)^β.

Built-in variants integrate and invert in closed form; a Callback wraps an
arbitrary evaluator and must declare a majorant to be sampled by thinning.
All values are immutable and safe to share between sampler runs.
"""

from __future__ import annotations

import bisect
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, ClassVar, Iterable, Optional, Union

from scipy import integrate

from app.config import QUAD_ABS_TOL, QUAD_LIMIT, QUAD_REL_TOL
from app.errors import (
    InvalidParameter,
    MissingMajorant,
    NegativeTime,
    QuadratureNonConvergence,
    ReversedInterval,
)

logger = logging.getLogger(__name__)

INF = math.inf


@dataclass(frozen=True)
class Temperature:
    beta: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.beta, (int, float)) and math.isfinite(self.beta) and self.beta > 0):
            raise InvalidParameter(f"inverse temperature must be a positive finite real, got {self.beta!r}")

    @classmethod
    def of(cls, beta: Union["Temperature", float]) -> "Temperature":
        return beta if isinstance(beta, Temperature) else cls(float(beta))

    def temper(self, value: float) -> float:
        if value <= 0.0:
            return 0.0
        if self.beta == 1.0:
            return value
        try:
            return value ** self.beta
        except OverflowError:
            return INF


IDENTITY = Temperature(1.0)


@dataclass(frozen=True)
class Constant:
    level: float
    kind: ClassVar[str] = "constant"

    def __post_init__(self):
        if not (math.isfinite(self.level) and self.level >= 0):
            raise InvalidParameter(f"constant level must be finite and >= 0, got {self.level!r}")


@dataclass(frozen=True)
class PiecewiseConstant:
    """levels[0] on [0, b_1), levels[i] on [b_i, b_{i+1}), levels[-1] on [b_k, ∞)."""

    breakpoints: tuple[float, ...]
    levels: tuple[float, ...]
    kind: ClassVar[str] = "piecewise"

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if len(self.levels) != len(self.breakpoints) + 1:
            raise InvalidParameter("piecewise rate needs exactly one more level than breakpoints")
        if any(not math.isfinite(b) for b in self.breakpoints):
            raise InvalidParameter("breakpoints must be finite")
        if any(b >= c for b, c in zip(self.breakpoints, self.breakpoints[1:])):
            raise InvalidParameter("breakpoints must be strictly increasing")
        if any(not (math.isfinite(v) and v >= 0) for v in self.levels):
            raise InvalidParameter("levels must be finite and >= 0")

    def segment(self, t: float) -> int:
        return bisect.bisect_right(self.breakpoints, t)

    def segment_bounds(self, i: int) -> tuple[float, float]:
        lower = self.breakpoints[i - 1] if i > 0 else -INF
        upper = self.breakpoints[i] if i < len(self.breakpoints) else INF
        return lower, upper


@dataclass(frozen=True)
class ExpAffine:
    """λ(t) = exp(offset + slope·t)."""

    offset: float
    slope: float
    kind: ClassVar[str] = "exp_affine"

    def __post_init__(self):
        if not (math.isfinite(self.offset) and math.isfinite(self.slope)):
            raise InvalidParameter("exp_affine offset and slope must be finite")


@dataclass(frozen=True)
class Callback:
    """Opaque rate t ↦ evaluator(t); declared_majorant(s, t) bounds it on [s, t]."""

    evaluator: Callable[[float], float]
    declared_majorant: Optional[Callable[[float, float], float]] = None
    kind: ClassVar[str] = "callback"


RateFunction = Union[Constant, PiecewiseConstant, ExpAffine, Callback]


def _check_time(t: float) -> None:
    if t < 0:
        raise NegativeTime(f"time must be >= 0, got {t!r}")


def _check_interval(s: float, t: float) -> None:
    _check_time(s)
    if s > t:
        raise ReversedInterval(f"interval start {s!r} is after end {t!r}")


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return INF


def _raw_rate(f: RateFunction, t: float) -> float:
    if isinstance(f, Constant):
        return f.level
    if isinstance(f, PiecewiseConstant):
        return f.levels[f.segment(t)]
    if isinstance(f, ExpAffine):
        return _exp(f.offset + f.slope * t)
    value = float(f.evaluator(t))
    if value < 0 or math.isnan(value):
        raise InvalidParameter(f"callback rate returned {value!r} at t={t!r}")
    return value


def rate_at(f: RateFunction, t: float, beta: Union[Temperature, float] = IDENTITY) -> float:
    _check_time(t)
    beta = Temperature.of(beta)
    if isinstance(f, ExpAffine):
        return _exp(beta.beta * (f.offset + f.slope * t))
    return beta.temper(_raw_rate(f, t))


def log_rate_at(f: RateFunction, t: float, beta: Union[Temperature, float] = IDENTITY) -> float:
    """β·log λ(t), or -inf where the rate vanishes."""
    _check_time(t)
    beta = Temperature.of(beta)
    if isinstance(f, ExpAffine):
        return beta.beta * (f.offset + f.slope * t)
    raw = _raw_rate(f, t)
    return beta.beta * math.log(raw) if raw > 0 else -INF


def _exp_affine_integral(c: float, k: float, s: float, t: float) -> float:
    # ∫_s^t exp(c + kτ) dτ
    if t == s:
        return 0.0
    if k == 0.0:
        return _exp(c) * (t - s)
    if math.isinf(t):
        return _exp(c + k * s) / -k if k < 0 else INF
    try:
        return math.exp(c + k * s) * math.expm1(k * (t - s)) / k
    except OverflowError:
        return INF


def _piecewise_integral(f: PiecewiseConstant, s: float, t: float, beta: Temperature) -> float:
    total = 0.0
    for i in range(f.segment(s), f.segment(t) + 1):
        lower, upper = f.segment_bounds(i)
        length = min(upper, t) - max(lower, s)
        if length <= 0:
            continue
        level = beta.temper(f.levels[i])
        if level == 0.0:
            continue
        total += INF if math.isinf(length) else level * length
    return total


def _callback_integral(f: Callback, s: float, t: float, beta: Temperature) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, error = integrate.quad(
                lambda tau: beta.temper(_raw_rate(f, tau)),
                s,
                t,
                epsabs=QUAD_ABS_TOL,
                epsrel=QUAD_REL_TOL,
                limit=QUAD_LIMIT,
            )
        except integrate.IntegrationWarning as exc:
            raise QuadratureNonConvergence(f"quadrature on [{s}, {t}] did not converge: {exc}") from exc
    logger.debug("quad on [%s, %s] = %s (err %s)", s, t, value, error)
    return max(value, 0.0)


def integrate_rate(f: RateFunction, s: float, t: float, beta: Union[Temperature, float] = IDENTITY) -> float:
    """∫_s^t λ(τ)^β dτ; t may be +inf."""
    _check_interval(s, t)
    beta = Temperature.of(beta)
    if s == t:
        return 0.0
    if isinstance(f, Constant):
        level = beta.temper(f.level)
        if level == 0.0:
            return 0.0
        return level * (t - s)
    if isinstance(f, PiecewiseConstant):
        return _piecewise_integral(f, s, t, beta)
    if isinstance(f, ExpAffine):
        return _exp_affine_integral(beta.beta * f.offset, beta.beta * f.slope, s, t)
    return _callback_integral(f, s, t, beta)


def majorant(f: RateFunction, s: float, t: float, beta: Union[Temperature, float] = IDENTITY) -> float:
    """An upper bound on λ(τ)^β over [s, t]; tight for the built-in variants."""
    _check_interval(s, t)
    beta = Temperature.of(beta)
    if isinstance(f, Constant):
        return beta.temper(f.level)
    if isinstance(f, PiecewiseConstant):
        return max(beta.temper(f.levels[i]) for i in range(f.segment(s), f.segment(t) + 1))
    if isinstance(f, ExpAffine):
        if math.isinf(t):
            return INF if f.slope > 0 else rate_at(f, s, beta)
        return max(rate_at(f, s, beta), rate_at(f, t, beta))
    if f.declared_majorant is None:
        raise MissingMajorant("callback rate has no declared majorant")
    return beta.temper(float(f.declared_majorant(s, t)))


def has_closed_form_inverse(f: RateFunction) -> bool:
    return isinstance(f, (Constant, PiecewiseConstant, ExpAffine))


def _log1p_exp(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 30 else math.log1p(math.exp(x))


def invert_integrated_rate(
    f: RateFunction, s: float, mass: float, beta: Union[Temperature, float] = IDENTITY
) -> Optional[float]:
    """Smallest t >= s with ∫_s^t λ^β = mass, or None if the rate never accumulates it."""
    _check_time(s)
    beta = Temperature.of(beta)
    if mass < 0:
        raise InvalidParameter("mass must be >= 0")
    if isinstance(f, Constant):
        level = beta.temper(f.level)
        return s + mass / level if level > 0 else None
    if isinstance(f, PiecewiseConstant):
        remaining = mass
        i = f.segment(s)
        start = s
        while True:
            _, upper = f.segment_bounds(i)
            level = beta.temper(f.levels[i])
            if level > 0:
                if math.isinf(upper) or level * (upper - start) >= remaining:
                    return start + remaining / level
                remaining -= level * (upper - start)
            elif math.isinf(upper):
                return None
            start = upper
            i += 1
    if isinstance(f, ExpAffine):
        c = beta.beta * f.offset
        k = beta.beta * f.slope
        log_start_rate = c + k * s
        if mass == 0.0:
            return s
        if k == 0.0:
            wait = mass * _exp(-c)
            return s + wait if math.isfinite(wait) else None
        log_z = math.log(mass) + math.log(abs(k)) - log_start_rate
        if k > 0:
            return s + _log1p_exp(log_z) / k
        if log_z >= 0.0:
            return None
        return s + math.log1p(-math.exp(log_z)) / k
    raise InvalidParameter("callback rates have no closed-form inverse")


def sum_of_rates(rates: Iterable[RateFunction], beta: Union[Temperature, float] = IDENTITY) -> RateFunction:
    """The tempered superposition Σ λ_a^β as a single untempered rate function."""
    rates = tuple(rates)
    beta = Temperature.of(beta)
    if all(isinstance(f, Constant) for f in rates):
        return Constant(sum(beta.temper(f.level) for f in rates))
    if all(isinstance(f, (Constant, PiecewiseConstant)) for f in rates):
        breakpoints = sorted({b for f in rates if isinstance(f, PiecewiseConstant) for b in f.breakpoints})
        starts = [0.0] + breakpoints
        levels = [sum(rate_at(f, max(start, 0.0), beta) for f in rates) for start in starts]
        return PiecewiseConstant(tuple(breakpoints), tuple(levels))

    def evaluator(t: float) -> float:
        return sum(rate_at(f, t, beta) for f in rates)

    def bound(s: float, t: float) -> float:
        return sum(majorant(f, s, t, beta) for f in rates)

    return Callback(evaluator=evaluator, declared_majorant=bound)


def rate_to_dict(f: RateFunction) -> dict:
    if isinstance(f, Constant):
        return {"kind": f.kind, "level": f.level}
    if isinstance(f, PiecewiseConstant):
        return {"kind": f.kind, "breakpoints": list(f.breakpoints), "levels": list(f.levels)}
    if isinstance(f, ExpAffine):
        return {"kind": f.kind, "offset": f.offset, "slope": f.slope}
    raise InvalidParameter("callback rates cannot be serialised")


def rate_from_dict(payload: dict) -> RateFunction:
    kind = payload.get("kind")
    if kind == Constant.kind:
        return Constant(float(payload["level"]))
    if kind == PiecewiseConstant.kind:
        return PiecewiseConstant(tuple(payload["breakpoints"]), tuple(payload["levels"]))
    if kind == ExpAffine.kind:
        return ExpAffine(float(payload["offset"]), float(payload["slope"]))
    raise InvalidParameter(f"unknown rate kind {kind!r}")
