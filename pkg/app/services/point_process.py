"""Counting processes on the time line: wait-time and path sampling, path
densities, and the small-bin discrete-time approximations.

Every stochastic function takes a caller-owned numpy Generator; see
app.utils.streams for how streams are derived.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from scipy import optimize, stats

from app.config import BIN_N_MAX, MAX_THINNING_WINDOWS, PMF_TOL, ROOT_XTOL, THINNING_WINDOW
from app.errors import InvalidParameter, ReversedInterval, ThinningExhausted, ZeroRateAtArrival
from app.services.rate_model import (
    IDENTITY,
    RateFunction,
    Temperature,
    has_closed_form_inverse,
    integrate_rate,
    invert_integrated_rate,
    log_rate_at,
    majorant,
    rate_at,
    sum_of_rates,
)

logger = logging.getLogger(__name__)


class _NoArrivalType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return "NoArrival"


NoArrival = _NoArrivalType()


@dataclass(frozen=True)
class ArrivalPath:
    horizon: float
    arrivals: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "arrivals", tuple(float(t) for t in self.arrivals))
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidParameter("path horizon must be a positive finite time")
        previous = 0.0
        for t in self.arrivals:
            if not previous < t <= self.horizon:
                raise InvalidParameter("arrivals must be strictly increasing in (0, horizon]")
            previous = t

    def __len__(self):
        return len(self.arrivals)

    def gaps(self) -> list[float]:
        previous = 0.0
        out = []
        for t in self.arrivals:
            out.append(t - previous)
            previous = t
        return out

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "arrivals": list(self.arrivals)}

    @classmethod
    def from_dict(cls, payload: dict) -> "ArrivalPath":
        try:
            return cls(float(payload["horizon"]), tuple(payload.get("arrivals", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidParameter(f"arrival path needs a horizon and an arrivals list: {exc}") from exc


@dataclass(frozen=True)
class BinDistribution:
    """Law of the arrival count in one bin: probs[n] for n <= n_max plus the remaining tail."""

    delta: float
    probs: tuple[float, ...]
    tail_mass: float

    def __post_init__(self):
        if abs(sum(self.probs) + self.tail_mass - 1.0) > PMF_TOL:
            raise InvalidParameter("bin probabilities and tail must sum to 1")

    @property
    def n_max(self) -> int:
        return len(self.probs) - 1

    def mass_at_least(self, k: int) -> float:
        return float(math.fsum(self.probs[k:]) + self.tail_mass)


def _poisson_bins(delta: float, mean: float, n_max: int) -> BinDistribution:
    counts = np.arange(n_max + 1)
    probs = stats.poisson.pmf(counts, mean) if mean > 0 else (counts == 0).astype(float)
    tail = float(stats.poisson.sf(n_max, mean)) if mean > 0 else 0.0
    return BinDistribution(delta=delta, probs=tuple(float(p) for p in probs), tail_mass=tail)


def _thinning_wait(f: RateFunction, beta: Temperature, start: float, horizon: float, rng, window: float):
    t = start
    windows = 0
    while t < horizon:
        end = min(t + window, horizon)
        bound = majorant(f, t, end, beta)
        windows += 1
        if windows > MAX_THINNING_WINDOWS:
            logger.warning("thinning gave up at t=%s after %d windows", t, MAX_THINNING_WINDOWS)
            raise ThinningExhausted(f"no arrival accepted after {MAX_THINNING_WINDOWS} thinning windows")
        if bound <= 0.0:
            t = end
            continue
        candidate = t + rng.exponential(1.0 / bound)
        if candidate > end:
            t = end
            continue
        t = candidate
        if rng.random() * bound <= rate_at(f, t, beta):
            return t
    return NoArrival


def sample_wait(
    f: RateFunction,
    beta: Union[Temperature, float],
    start: float,
    horizon: float,
    rng: np.random.Generator,
    window: float = THINNING_WINDOW,
):
    """First arrival time in (start, horizon] of a Poisson process with rate λ^β, else NoArrival."""
    if start > horizon:
        raise ReversedInterval(f"start {start!r} is after horizon {horizon!r}")
    beta = Temperature.of(beta)
    if has_closed_form_inverse(f):
        t = invert_integrated_rate(f, start, rng.exponential(), beta)
        if t is None or t > horizon:
            return NoArrival
        return t
    return _thinning_wait(f, beta, start, horizon, rng, window)


def sample_superposed_wait(
    rates: Iterable[RateFunction],
    beta: Union[Temperature, float],
    start: float,
    horizon: float,
    rng: np.random.Generator,
    window: float = THINNING_WINDOW,
):
    """First arrival of the superposition Σ_a λ_a^β in (start, horizon], else NoArrival.

    When the sum has no closed form but every term does, the summed compensator
    is inverted numerically; this also covers a total mass that stays finite.
    """
    if start > horizon:
        raise ReversedInterval(f"start {start!r} is after horizon {horizon!r}")
    rates = tuple(rates)
    beta = Temperature.of(beta)
    total = sum_of_rates(rates, beta)
    if has_closed_form_inverse(total) or not all(has_closed_form_inverse(f) for f in rates):
        return sample_wait(total, IDENTITY, start, horizon, rng, window)

    def compensator(t: float) -> float:
        return math.fsum(integrate_rate(f, start, t, beta) for f in rates)

    target = rng.exponential()
    if not compensator(horizon) > target:
        return NoArrival
    upper = horizon
    if math.isinf(upper):
        upper = start + 1.0
        while compensator(upper) < target:
            upper = start + 2.0 * (upper - start)
    # clipped so an overflowing compensator stays finite at the bracket end
    return optimize.brentq(lambda t: min(compensator(t), target + 1.0) - target, start, upper, xtol=ROOT_XTOL)


def _check_horizon(horizon: float) -> None:
    if not (math.isfinite(horizon) and horizon > 0):
        raise InvalidParameter("path horizon must be a positive finite time")


def sample_path(f: RateFunction, beta: Union[Temperature, float], horizon: float, rng) -> ArrivalPath:
    """Poisson path on [0, horizon]; the rate argument is absolute time."""
    _check_horizon(horizon)
    arrivals = []
    t = 0.0
    while True:
        t = sample_wait(f, beta, t, horizon, rng)
        if t is NoArrival:
            break
        arrivals.append(t)
    return ArrivalPath(horizon, tuple(arrivals))


def sample_renewal_path(f: RateFunction, beta: Union[Temperature, float], horizon: float, rng) -> ArrivalPath:
    """Renewal path: the rate argument restarts at 0 after each arrival (time 0 counts as a renewal)."""
    _check_horizon(horizon)
    arrivals = []
    last = 0.0
    while True:
        gap = sample_wait(f, beta, 0.0, horizon - last, rng)
        if gap is NoArrival:
            break
        last = min(last + gap, horizon)
        arrivals.append(last)
    return ArrivalPath(horizon, tuple(arrivals))


def _sum_log_rates(f: RateFunction, beta: Temperature, times) -> float:
    total = 0.0
    for i, t in enumerate(times):
        value = log_rate_at(f, t, beta)
        if value == -math.inf:
            raise ZeroRateAtArrival(i, t)
        total += value
    return total


def path_log_density(f: RateFunction, beta: Union[Temperature, float], path: ArrivalPath) -> float:
    beta = Temperature.of(beta)
    return -integrate_rate(f, 0.0, path.horizon, beta) + _sum_log_rates(f, beta, path.arrivals)


def renewal_path_log_density(f: RateFunction, beta: Union[Temperature, float], path: ArrivalPath) -> float:
    beta = Temperature.of(beta)
    gaps = path.gaps()
    compensator = sum(integrate_rate(f, 0.0, g, beta) for g in gaps)
    last = path.arrivals[-1] if path.arrivals else 0.0
    compensator += integrate_rate(f, 0.0, path.horizon - last, beta)
    return -compensator + _sum_log_rates(f, beta, gaps)


def arrival_count_pmf(
    f: RateFunction, beta: Union[Temperature, float], s: float, t: float, n_max: int = BIN_N_MAX
) -> BinDistribution:
    """Exact law of X(s, t): Poisson with mean ∫_s^t λ^β."""
    mean = integrate_rate(f, s, t, beta)
    return _poisson_bins(t - s, mean, n_max)


def discretize_bin(
    f: RateFunction, beta: Union[Temperature, float], t: float, delta: float, n_max: int = BIN_N_MAX
) -> BinDistribution:
    """Small-bin approximation: X(t, t+δ) ~ Poisson(δ·λ(t)^β)."""
    if not delta > 0:
        raise InvalidParameter("bin width must be > 0")
    return _poisson_bins(delta, delta * rate_at(f, t, beta), n_max)


def binary_bin_prob(f: RateFunction, beta: Union[Temperature, float], t: float, delta: float) -> float:
    """P(X(t, t+δ) >= 1) ≈ 1 - exp(-δ·λ(t)^β)."""
    if not delta > 0:
        raise InvalidParameter("bin width must be > 0")
    return -math.expm1(-delta * rate_at(f, t, beta))


def sample_discrete_skeleton(
    f: RateFunction,
    beta: Union[Temperature, float],
    horizon: float,
    delta: float,
    rng,
    renewal: bool = False,
) -> ArrivalPath:
    """One Bernoulli draw per bin of width δ; an arrival is recorded at the bin end."""
    _check_horizon(horizon)
    if not delta > 0:
        raise InvalidParameter("bin width must be > 0")
    bins = int(math.floor(horizon / delta + 1e-9))
    arrivals = []
    clock_origin = 0.0
    for i in range(bins):
        start = i * delta
        p = binary_bin_prob(f, beta, start - clock_origin if renewal else start, delta)
        if rng.random() < p:
            end = min((i + 1) * delta, horizon)
            arrivals.append(end)
            clock_origin = end
    return ArrivalPath(horizon, tuple(arrivals))


def gap_uniforms(f: RateFunction, beta: Union[Temperature, float], path: ArrivalPath, renewal: bool = False) -> list[float]:
    """Each gap's compensator mass mapped through its Exp(1) cdf truncated at the horizon.

    Pooled over many paths drawn from this law the values are Uniform(0, 1).
    """
    beta = Temperature.of(beta)
    out = []
    previous = 0.0
    for t in path.arrivals:
        origin = 0.0 if renewal else previous
        shift = previous if renewal else 0.0
        gap_mass = integrate_rate(f, origin, t - shift, beta)
        remaining = integrate_rate(f, origin, path.horizon - shift, beta)
        out.append(math.expm1(-gap_mass) / math.expm1(-remaining))
        previous = t
    return out
