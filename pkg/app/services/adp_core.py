"""Action-driven processes (generalized semi-Markov processes).

A model gives, for every state x and non-trivial action a, a rate function
λ_xa(w) of the wait w since the last non-trivial arrival, and a kernel
p_xay(w) over next states. Three samplers produce the same law:

- IAA: independent clocks per action, earliest wins;
- AAA: one wait from the total rate, then the action from the rate ratios;
- uniformized: a rate-λ̄ Poisson stream padded with trivial (Id) actions.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Literal, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from app.config import PMF_TOL
from app.errors import (
    AllRatesZero,
    BoundViolation,
    DegeneratePmf,
    InvalidParameter,
    UnknownState,
    ZeroTotalRate,
)
from app.services.point_process import NoArrival, sample_superposed_wait, sample_wait
from app.services.rate_model import (
    IDENTITY,
    Constant,
    RateFunction,
    Temperature,
    log_rate_at,
    majorant,
    rate_at,
)

logger = logging.getLogger(__name__)

State = Hashable


@dataclass(frozen=True)
class ActionId:
    index: int
    name: str
    is_trivial: bool = False

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Tabular:
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise InvalidParameter("a tabular state space needs at least one state")

    def contains(self, x: State) -> bool:
        return isinstance(x, (int, np.integer)) and 0 <= x < self.count

    def states(self) -> range:
        return range(self.count)


@dataclass(frozen=True)
class Opaque:
    """States owned by another module (e.g. potentials of a spiking network)."""

    label: str = "opaque"

    def contains(self, x: State) -> bool:
        return x is not None


StateSpace = Union[Tabular, Opaque]


@dataclass(frozen=True)
class StatePmf:
    support: tuple
    probs: np.ndarray = field(compare=False)

    @classmethod
    def point_mass(cls, state: State) -> "StatePmf":
        return cls((state,), np.ones(1))


@dataclass(frozen=True, eq=False)
class AdpModel:
    state_space: StateSpace
    actions: tuple[ActionId, ...]
    action_rate: Callable[[State, ActionId], RateFunction]
    transition: Callable[[State, ActionId, float], StatePmf]
    initial_state: State

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        indices = sorted(a.index for a in self.actions)
        if indices != list(range(len(self.actions))):
            raise InvalidParameter("action indices must be dense in [0, A)")
        if sum(a.is_trivial for a in self.actions) > 1:
            raise InvalidParameter("at most one trivial action is allowed")
        if not any(not a.is_trivial for a in self.actions):
            raise InvalidParameter("a model needs at least one non-trivial action")
        object.__setattr__(self, "actions", tuple(sorted(self.actions, key=lambda a: a.index)))
        if not self.state_space.contains(self.initial_state):
            raise UnknownState(f"initial state {self.initial_state!r} is not in the state space")

    @property
    def non_trivial_actions(self) -> tuple[ActionId, ...]:
        return tuple(a for a in self.actions if not a.is_trivial)

    @property
    def trivial_action(self) -> ActionId:
        for a in self.actions:
            if a.is_trivial:
                return a
        return ActionId(index=len(self.actions), name="Id", is_trivial=True)

    def action_named(self, name: str) -> ActionId:
        for a in self.actions + (self.trivial_action,):
            if a.name == name:
                return a
        raise InvalidParameter(f"unknown action {name!r}")

    def check_state(self, x: State) -> None:
        if not self.state_space.contains(x):
            raise UnknownState(f"state {x!r} is not in the state space")


@dataclass(frozen=True)
class MaxArrivals:
    count: int


@dataclass(frozen=True)
class MaxTime:
    time: float


Horizon = Union[MaxArrivals, MaxTime]


@dataclass(frozen=True)
class Step:
    wait: float
    action: ActionId
    state: State


@dataclass(frozen=True)
class ArrivalRecord:
    n: int
    t: float
    w: float
    action: ActionId
    state: State


@dataclass
class Trajectory:
    initial_state: State
    horizon: Horizon
    records: list[ArrivalRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def states(self) -> list:
        return [self.initial_state] + [r.state for r in self.records]

    def to_rows(self, encode_state: Callable[[State], Any] = lambda x: x) -> list[dict]:
        return [
            {"n": r.n, "t": r.t, "w": r.w, "a": r.action.name, "x": encode_state(r.state)}
            for r in self.records
        ]


@dataclass(frozen=True)
class Uniformized:
    lambda_bar: float


Sampler = Union[Literal["iaa", "aaa"], Uniformized]


# --- rates and probabilities -------------------------------------------------


def total_rate(model: AdpModel, x: State, w: float, beta: Union[Temperature, float] = IDENTITY) -> float:
    """λ_x^(β)(w) = Σ_a λ_xa(w)^β over non-trivial actions."""
    model.check_state(x)
    if w < 0:
        raise InvalidParameter("wait must be >= 0")
    return math.fsum(rate_at(model.action_rate(x, a), w, beta) for a in model.non_trivial_actions)


def action_probabilities(model: AdpModel, x: State, w: float, beta: Union[Temperature, float] = IDENTITY) -> np.ndarray:
    """p_xa^(β)(w) = λ_xa(w)^β / λ_x^(β)(w), indexed like model.non_trivial_actions."""
    model.check_state(x)
    log_rates = np.array([log_rate_at(model.action_rate(x, a), w, beta) for a in model.non_trivial_actions])
    if np.all(np.isneginf(log_rates)):
        raise ZeroTotalRate(f"all action rates vanish in state {x!r} at wait {w!r}")
    probs = np.exp(log_rates - logsumexp(log_rates))
    return probs / probs.sum()


def _temper_pmf(probs: np.ndarray, beta: Temperature) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    top = probs.max() if probs.size else 0.0
    if not top > 0:
        raise DegeneratePmf("transition pmf has no mass")
    if beta.beta == 1.0:
        return probs
    powered = (probs / top) ** beta.beta
    return powered / powered.sum()


def tempered_transition_pmf(
    model: AdpModel, x: State, a: ActionId, w: float, beta: Union[Temperature, float] = IDENTITY
) -> StatePmf:
    """p_xay^(β)(w) = p_xay(w)^β / Σ_y p_xay(w)^β; β=1 returns the base kernel."""
    model.check_state(x)
    base = model.transition(x, a, w)
    return StatePmf(base.support, _temper_pmf(base.probs, Temperature.of(beta)))


def _draw_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    if len(probs) == 1:
        return 0
    cumulative = np.cumsum(probs)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(probs) - 1)


def _next_state(model: AdpModel, x: State, a: ActionId, w: float, beta: Temperature, rng) -> State:
    pmf = tempered_transition_pmf(model, x, a, w, beta)
    return pmf.support[_draw_index(pmf.probs, rng)]


# --- step samplers ------------------------------------------------------------


def sample_iaa_step(model: AdpModel, x: State, beta, horizon: float, rng):
    """Independent clocks: w = min_a w^(a), a = argmin (lowest index on ties)."""
    model.check_state(x)
    beta = Temperature.of(beta)
    best_wait = math.inf
    best_action = None
    for a in model.non_trivial_actions:
        wait = sample_wait(model.action_rate(x, a), beta, 0.0, horizon, rng)
        if wait is not NoArrival and wait < best_wait:
            best_wait, best_action = wait, a
    if best_action is None:
        return NoArrival
    return Step(best_wait, best_action, _next_state(model, x, best_action, best_wait, beta, rng))


def sample_aaa_step(model: AdpModel, x: State, beta, horizon: float, rng):
    """Action after arrival: w from the total rate, then a ~ p_xa^(β)(w)."""
    beta = Temperature.of(beta)
    model.check_state(x)
    rates = [model.action_rate(x, a) for a in model.non_trivial_actions]
    wait = sample_superposed_wait(rates, beta, 0.0, horizon, rng)
    if wait is NoArrival:
        return NoArrival
    try:
        probs = action_probabilities(model, x, wait, beta)
    except ZeroTotalRate:
        return NoArrival
    action = model.non_trivial_actions[_draw_index(probs, rng)]
    return Step(wait, action, _next_state(model, x, action, wait, beta, rng))


def _bound_tolerance(lambda_bar: float) -> float:
    return lambda_bar * (1.0 + 1e-12)


def check_uniformization_bound(model: AdpModel, lambda_bar: float, beta, horizon: float) -> None:
    """Eagerly verify λ̄ >= λ_x^(β)(w) for all tabular states and waits in [0, horizon]."""
    if not (math.isfinite(lambda_bar) and lambda_bar > 0):
        raise InvalidParameter("uniformization rate must be a positive finite real")
    if not isinstance(model.state_space, Tabular):
        states: Iterable[State] = (model.initial_state,)
    else:
        states = model.state_space.states()
    for x in states:
        bound = math.fsum(majorant(model.action_rate(x, a), 0.0, horizon, beta) for a in model.non_trivial_actions)
        if bound > _bound_tolerance(lambda_bar):
            raise BoundViolation(
                f"uniformization rate {lambda_bar!r} is below the total rate bound {bound!r} in state {x!r}"
            )


def sample_uniformized(
    model: AdpModel,
    lambda_bar: float,
    beta,
    horizon: MaxTime,
    x0: Optional[State],
    rng: np.random.Generator,
) -> Trajectory:
    """N ~ Pois(λ̄T) uniform arrival times; each is Id with prob 1 - λ_x^(β)(w)/λ̄.

    Id arrivals keep the state and do not reset the wait clock of the action rates.
    """
    if not isinstance(horizon, MaxTime):
        raise InvalidParameter("uniformization needs a MaxTime horizon")
    beta = Temperature.of(beta)
    x = model.initial_state if x0 is None else x0
    model.check_state(x)
    check_uniformization_bound(model, lambda_bar, beta, horizon.time)
    trivial = model.trivial_action
    traj = Trajectory(initial_state=x, horizon=horizon)
    count = int(rng.poisson(lambda_bar * horizon.time))
    times = np.sort(rng.uniform(0.0, horizon.time, size=count))
    previous = 0.0
    clock_origin = 0.0
    for n, t in enumerate(times, start=1):
        t = float(t)
        wait = t - clock_origin
        rates = np.array([rate_at(model.action_rate(x, a), wait, beta) for a in model.non_trivial_actions])
        cumulative = np.cumsum(rates)
        if cumulative[-1] > _bound_tolerance(lambda_bar):
            raise BoundViolation(f"total rate {cumulative[-1]!r} exceeds {lambda_bar!r} in state {x!r}")
        u = rng.random() * lambda_bar
        if u >= cumulative[-1]:
            traj.records.append(ArrivalRecord(n, t, t - previous, trivial, x))
        else:
            action = model.non_trivial_actions[int(np.searchsorted(cumulative, u, side="right"))]
            x = _next_state(model, x, action, wait, beta, rng)
            traj.records.append(ArrivalRecord(n, t, t - previous, action, x))
            clock_origin = t
        previous = t
    return traj


def strip_trivial(traj: Trajectory) -> Trajectory:
    """Drop Id records; each survivor's wait absorbs the preceding Id waits."""
    out = Trajectory(initial_state=traj.initial_state, horizon=traj.horizon)
    previous = 0.0
    for record in traj.records:
        if record.action.is_trivial:
            continue
        out.records.append(ArrivalRecord(len(out.records) + 1, record.t, record.t - previous, record.action, record.state))
        previous = record.t
    return out


def simulate(
    model: AdpModel,
    sampler: Sampler,
    beta,
    horizon: Horizon,
    x0: Optional[State],
    rng: np.random.Generator,
) -> Trajectory:
    if isinstance(sampler, Uniformized):
        return sample_uniformized(model, sampler.lambda_bar, beta, horizon, x0, rng)
    steppers = {"iaa": sample_iaa_step, "aaa": sample_aaa_step}
    if sampler not in steppers:
        raise InvalidParameter(f"unknown sampler {sampler!r}")
    step_fn = steppers[sampler]
    if isinstance(horizon, MaxTime) and not (math.isfinite(horizon.time) and horizon.time >= 0):
        raise InvalidParameter("time horizon must be finite")
    beta = Temperature.of(beta)
    x = model.initial_state if x0 is None else x0
    model.check_state(x)
    traj = Trajectory(initial_state=x, horizon=horizon)
    t = 0.0
    while True:
        if isinstance(horizon, MaxArrivals) and len(traj.records) >= horizon.count:
            break
        remaining = horizon.time - t if isinstance(horizon, MaxTime) else math.inf
        step = step_fn(model, x, beta, remaining, rng)
        if step is NoArrival:
            break
        t += step.wait
        x = step.state
        traj.records.append(ArrivalRecord(len(traj.records) + 1, t, step.wait, step.action, x))
    logger.debug("simulated %d arrivals with %s", len(traj.records), sampler)
    return traj


@dataclass(frozen=True)
class EmbeddedChains:
    stepped: list
    discrete: list


def embedded_chains(traj: Trajectory) -> EmbeddedChains:
    stepped = [(0.0, traj.initial_state)] + [(r.t, r.state) for r in traj.records]
    return EmbeddedChains(stepped=stepped, discrete=[x for _, x in stepped])


@dataclass(frozen=True)
class ZeroTemperatureStep:
    action: ActionId
    state: State


def zero_temperature_step(model: AdpModel, x: State, w_grid: Sequence[float]) -> ZeroTemperatureStep:
    """β → ∞: the rate-maximising action, then the most likely next state (lowest index on ties)."""
    model.check_state(x)
    if len(w_grid) == 0:
        raise InvalidParameter("wait grid must not be empty")
    w0 = float(w_grid[0])
    rates = np.array([rate_at(model.action_rate(x, a), w0) for a in model.non_trivial_actions])
    if not np.any(rates > 0):
        raise AllRatesZero(f"no accessible action in state {x!r}")
    action = model.non_trivial_actions[int(np.argmax(rates))]
    base = model.transition(x, action, w0)
    return ZeroTemperatureStep(action, base.support[int(np.argmax(base.probs))])


def zero_temperature_path(model: AdpModel, x0: State, steps: int, w_grid: Sequence[float]) -> list[ZeroTemperatureStep]:
    path = []
    x = x0
    for _ in range(steps):
        try:
            step = zero_temperature_step(model, x, w_grid)
        except AllRatesZero:
            break
        path.append(step)
        x = step.state
    return path


# --- tabular builders ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TabularKernel:
    """matrices[bucket, action, x, y]; bucket chosen by the wait via wait_breakpoints."""

    matrices: np.ndarray
    wait_breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim == 3:
            m = m[np.newaxis]
        if m.ndim != 4 or m.shape[2] != m.shape[3]:
            raise InvalidParameter("transition matrices must have shape (buckets, A, S, S)")
        if m.shape[0] != len(self.wait_breakpoints) + 1:
            raise InvalidParameter("need one matrix set per wait bucket")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=3) - 1.0) > PMF_TOL):
            raise InvalidParameter("every transition row must be a pmf")
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "_support", tuple(range(m.shape[2])))

    def pmf(self, x: int, a: ActionId, w: float) -> StatePmf:
        bucket = bisect.bisect_right(self.wait_breakpoints, w)
        return StatePmf(self._support, self.matrices[bucket, a.index, x])


def tabular_model(
    state_count: int,
    action_names: Sequence[str],
    rates: Mapping[tuple[int, int], RateFunction],
    kernel: TabularKernel,
    initial_state: int = 0,
) -> AdpModel:
    """Tabular ADP; (x, a) pairs missing from `rates` are inaccessible (rate 0)."""
    actions = tuple(ActionId(i, name) for i, name in enumerate(action_names))
    if kernel.matrices.shape[1:3] != (len(actions), state_count):
        raise InvalidParameter("kernel shape does not match states and actions")
    zero = Constant(0.0)
    table = {(int(x), int(a)): f for (x, a), f in rates.items()}

    def action_rate(x, a):
        return table.get((x, a.index), zero)

    return AdpModel(
        state_space=Tabular(state_count),
        actions=actions,
        action_rate=action_rate,
        transition=kernel.pmf,
        initial_state=initial_state,
    )


def constant_rate_model(rate_matrix: Sequence[Sequence[float]], transitions, initial_state: int = 0, action_names=None) -> AdpModel:
    """Shortcut: rate_matrix[x][a] constant rates, transitions[a][x] pmfs."""
    rate_matrix = np.asarray(rate_matrix, dtype=float)
    states, n_actions = rate_matrix.shape
    names = list(action_names or [f"a{i}" for i in range(n_actions)])
    rates = {(x, a): Constant(float(rate_matrix[x, a])) for x in range(states) for a in range(n_actions)}
    return tabular_model(states, names, rates, TabularKernel(np.asarray(transitions, dtype=float)), initial_state)


def counting_process_model(rate: RateFunction, max_count: int) -> AdpModel:
    """States 0..max_count; the single action Succ adds one and is inaccessible at max_count."""
    if max_count < 1:
        raise InvalidParameter("max_count must be >= 1")
    states = max_count + 1
    succ = np.zeros((1, states, states))
    for x in range(states):
        succ[0, x, min(x + 1, max_count)] = 1.0
    rates = {(x, 0): rate for x in range(max_count)}
    return tabular_model(states, ["Succ"], rates, TabularKernel(succ), 0)


def trajectory_from_rows(model: AdpModel, rows: Iterable[Mapping[str, Any]], horizon: Horizon) -> Trajectory:
    """Inverse of Trajectory.to_rows for tabular models; t is rebuilt as the running sum of w."""
    if not isinstance(model.state_space, Tabular):
        raise InvalidParameter("only tabular trajectories can be read back")
    traj = Trajectory(initial_state=model.initial_state, horizon=horizon)
    t = 0.0
    for row in rows:
        wait = float(row["w"])
        if not wait >= 0:
            raise InvalidParameter(f"row {row!r} has a negative wait")
        t += wait
        state = int(row["x"])
        model.check_state(state)
        traj.records.append(ArrivalRecord(len(traj.records) + 1, t, wait, model.action_named(row["a"]), state))
    return traj
