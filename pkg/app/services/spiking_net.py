"""Stochastic integrate-and-fire network expressed as an action-driven process.

Between arrivals every potential decays exactly, u_i(t) = u_i(t_n)·e^{-τ(t - t_n)}.
Neuron j fires with rate g(u_j)^β, g(u) = exp(gain·(u - threshold)); a spike of j
resets u_j and adds ω_ij to every other neuron i.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from app.errors import InvalidParameter, MajorantUnavailable
from app.services.adp_core import (
    ActionId,
    AdpModel,
    Horizon,
    MaxTime,
    Opaque,
    Sampler,
    StatePmf,
    Trajectory,
    simulate,
)
from app.services.rate_model import Callback, Temperature

logger = logging.getLogger(__name__)

# exp() overflows just above 709.78
_MAX_LOG_RATE = 700.0


@dataclass(frozen=True)
class PotentialState:
    potentials: tuple[float, ...]
    time_of_last_arrival: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "potentials", tuple(float(u) for u in self.potentials))
        if not all(math.isfinite(u) for u in self.potentials) or not math.isfinite(self.time_of_last_arrival):
            raise InvalidParameter("potentials and arrival time must be finite")


@dataclass(frozen=True, eq=False)
class SpikingNetwork:
    weights: np.ndarray
    decay: float
    rate_gain: float
    rate_threshold: float
    initial_potentials: tuple[float, ...]
    reset_potential: float = 0.0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1] or weights.shape[0] < 1:
            raise InvalidParameter("weights must be a non-empty square matrix")
        if not np.all(np.isfinite(weights)):
            raise InvalidParameter("weights must be finite")
        if not (math.isfinite(self.decay) and self.decay > 0):
            raise InvalidParameter("decay τ must be > 0")
        if not (math.isfinite(self.rate_gain) and self.rate_gain > 0):
            raise InvalidParameter("rate gain must be > 0")
        if len(self.initial_potentials) != weights.shape[0]:
            raise InvalidParameter("need one initial potential per neuron")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "initial_potentials", tuple(float(u) for u in self.initial_potentials))

    @property
    def neuron_count(self) -> int:
        return self.weights.shape[0]

    @property
    def initial_state(self) -> PotentialState:
        return PotentialState(self.initial_potentials, 0.0)

    def log_rate(self, u: float) -> float:
        return self.rate_gain * (u - self.rate_threshold)


def decay_potentials(state: PotentialState, dt: float, tau: float) -> PotentialState:
    if dt < 0:
        raise InvalidParameter("dt must be >= 0")
    factor = math.exp(-tau * dt)
    return PotentialState(tuple(u * factor for u in state.potentials), state.time_of_last_arrival)


def spike_rate(
    network: SpikingNetwork, state: PotentialState, j: int, w: float, beta: Union[Temperature, float] = 1.0
) -> float:
    if w < 0:
        raise InvalidParameter("wait must be >= 0")
    u = state.potentials[j] * math.exp(-network.decay * w)
    return math.exp(Temperature.of(beta).beta * network.log_rate(u))


def neuron_rate_function(network: SpikingNetwork, u_j: float) -> Callback:
    """w ↦ g(u_j·e^{-τw}); monotone in w, so the endpoint values bound it on any window."""
    if network.log_rate(u_j) > _MAX_LOG_RATE or network.log_rate(0.0) > _MAX_LOG_RATE:
        raise MajorantUnavailable(f"rate at potential {u_j!r} overflows")
    tau = network.decay

    def evaluator(w: float) -> float:
        return math.exp(network.log_rate(u_j * math.exp(-tau * w)))

    def bound(s: float, t: float) -> float:
        end = evaluator(t) if math.isfinite(t) else math.exp(network.log_rate(0.0))
        return max(evaluator(s), end)

    return Callback(evaluator=evaluator, declared_majorant=bound)


def apply_spike(network: SpikingNetwork, state: PotentialState, j: int) -> PotentialState:
    if not 0 <= j < network.neuron_count:
        raise InvalidParameter(f"neuron {j} out of range")
    potentials = np.asarray(state.potentials) + network.weights[:, j]
    potentials[j] = network.reset_potential
    return PotentialState(tuple(potentials.tolist()), state.time_of_last_arrival)


def spike_actions(network: SpikingNetwork) -> tuple[ActionId, ...]:
    return tuple(ActionId(j, f"Spike_{j + 1}") for j in range(network.neuron_count))


def as_adp(network: SpikingNetwork) -> AdpModel:
    def action_rate(x: PotentialState, a: ActionId) -> Callback:
        return neuron_rate_function(network, x.potentials[a.index])

    def transition(x: PotentialState, a: ActionId, w: float) -> StatePmf:
        decayed = decay_potentials(x, w, network.decay)
        fired = apply_spike(network, decayed, a.index)
        return StatePmf.point_mass(PotentialState(fired.potentials, x.time_of_last_arrival + w))

    return AdpModel(
        state_space=Opaque("potentials"),
        actions=spike_actions(network),
        action_rate=action_rate,
        transition=transition,
        initial_state=network.initial_state,
    )


def simulate_spiking(
    network: SpikingNetwork,
    horizon: Union[Horizon, float],
    beta: Union[Temperature, float],
    rng: np.random.Generator,
    sampler: Sampler = "iaa",
) -> Trajectory:
    if isinstance(horizon, (int, float)):
        horizon = MaxTime(float(horizon))
    traj = simulate(as_adp(network), sampler, beta, horizon, None, rng)
    logger.debug("spiking run: %d spikes", len(traj))
    return traj


def encode_potentials(state: PotentialState) -> list[float]:
    return list(state.potentials)


def potentials_at(network: SpikingNetwork, traj: Trajectory, t: float) -> tuple[float, ...]:
    """u(t) rebuilt from the last arrival at or before t."""
    if t < 0:
        raise InvalidParameter("time must be >= 0")
    records = [r for r in traj.records if not r.action.is_trivial]
    k = bisect.bisect_right([r.t for r in records], t)
    if k == 0:
        anchor, state = 0.0, traj.initial_state
    else:
        anchor, state = records[k - 1].t, records[k - 1].state
    return decay_potentials(state, t - anchor, network.decay).potentials


def spike_raster(traj: Trajectory) -> list[tuple[float, int]]:
    return [(r.t, r.action.index) for r in traj.records if not r.action.is_trivial]


def inter_spike_intervals(traj: Trajectory, neuron: int) -> list[float]:
    """Gaps between consecutive spikes of one neuron (time 0 is not counted as a spike)."""
    times = [t for t, j in spike_raster(traj) if j == neuron]
    return [b - a for a, b in zip(times, times[1:])]
