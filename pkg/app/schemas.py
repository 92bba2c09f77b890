"""JSON spec formats for rates, models, networks, MDPs and policies.

Every parse_* helper returns the built domain object and reports any violated
invariant as ParseError.
"""

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

from app.errors import InvalidParameter, ParseError
from app.services.adp_core import AdpModel, TabularKernel, tabular_model
from app.services.maxent_rl import AnyPolicy, TabularMdp, policy_from_dict
from app.services.rate_model import RateFunction, rate_from_dict
from app.services.spiking_net import SpikingNetwork


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConstantSpec(_Spec):
    kind: Literal["constant"]
    level: float = Field(ge=0)


class PiecewiseSpec(_Spec):
    kind: Literal["piecewise"]
    breakpoints: list[float]
    levels: list[float]


class ExpAffineSpec(_Spec):
    kind: Literal["exp_affine"]
    offset: float
    slope: float


RateSpec = Annotated[Union[ConstantSpec, PiecewiseSpec, ExpAffineSpec], Field(discriminator="kind")]


def build_rate(spec: RateSpec) -> RateFunction:
    return rate_from_dict(spec.model_dump())


_rate_adapter = TypeAdapter(RateSpec)


class ModelSpec(_Spec):
    """{"states": S, "actions": [...], "rates": {"x,a": rate}, "transitions": {"x,a": pmf}, "initial": x0}.

    `a` is an action index or name. With wait_breakpoints set, a transition
    entry may be a list of pmfs, one per wait bucket. Pairs without a rate are
    inaccessible; pairs without a transition stay put.
    """

    states: int = Field(ge=1)
    actions: list[str] = Field(min_length=1)
    rates: dict[str, RateSpec] = Field(default_factory=dict)
    transitions: dict[str, Union[list[float], list[list[float]]]] = Field(default_factory=dict)
    initial: int = 0
    wait_breakpoints: list[float] = Field(default_factory=list)

    def pair(self, key: str) -> tuple[int, int]:
        try:
            x_text, a_text = (part.strip() for part in key.split(","))
            a = int(a_text) if a_text.lstrip("-").isdigit() else self.actions.index(a_text)
            x = int(x_text)
        except ValueError as exc:
            raise ValueError(f"key {key!r} is not of the form 'x,a'") from exc
        if not (0 <= x < self.states and 0 <= a < len(self.actions)):
            raise ValueError(f"key {key!r} is out of range")
        return x, a

    @model_validator(mode="after")
    def _check_keys(self):
        for key in list(self.rates) + list(self.transitions):
            self.pair(key)
        if not 0 <= self.initial < self.states:
            raise ValueError("initial state out of range")
        return self

    def kernel(self) -> TabularKernel:
        buckets = len(self.wait_breakpoints) + 1
        matrices = np.zeros((buckets, len(self.actions), self.states, self.states))
        for x in range(self.states):
            matrices[:, :, x, x] = 1.0
        for key, value in self.transitions.items():
            x, a = self.pair(key)
            rows = np.asarray(value, dtype=float)
            if rows.ndim == 1:
                rows = np.broadcast_to(rows, (buckets, self.states))
            if rows.shape != (buckets, self.states):
                raise ValueError(f"transition {key!r} must have {self.states} entries per wait bucket")
            matrices[:, a, x, :] = rows
        return TabularKernel(matrices, tuple(self.wait_breakpoints))

    def build(self) -> AdpModel:
        rates = {self.pair(k): build_rate(v) for k, v in self.rates.items()}
        return tabular_model(self.states, self.actions, rates, self.kernel(), self.initial)


class NetworkSpec(_Spec):
    n: int = Field(ge=1)
    weights: list[list[float]]
    tau: float
    gain: float
    threshold: float = 0.0
    reset: float = 0.0
    u0: list[float]

    @field_validator("tau")
    @classmethod
    def _tau_positive(cls, v):
        if not v > 0:
            raise ValueError("decay tau must be > 0")
        return v

    @field_validator("gain")
    @classmethod
    def _gain_positive(cls, v):
        if not v > 0:
            raise ValueError("rate gain must be > 0 (g must be strictly increasing)")
        return v

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.weights) != self.n or any(len(row) != self.n for row in self.weights):
            raise ValueError("weights must be an n×n matrix")
        if len(self.u0) != self.n:
            raise ValueError("u0 must have n entries")
        return self

    def build(self) -> SpikingNetwork:
        return SpikingNetwork(
            weights=np.asarray(self.weights, dtype=float),
            decay=self.tau,
            rate_gain=self.gain,
            rate_threshold=self.threshold,
            initial_potentials=tuple(self.u0),
            reset_potential=self.reset,
        )


class MdpSpec(_Spec):
    """Arrays indexed reward[s][a] and transition[s][a][s']."""

    S: int = Field(ge=1)
    A: int = Field(ge=1)
    initial: list[float]
    transition: list[list[list[float]]]
    reward: list[list[float]]

    def build(self) -> TabularMdp:
        reward = np.asarray(self.reward, dtype=float)
        if reward.shape != (self.S, self.A):
            raise ValueError(f"reward must be {self.S}×{self.A}")
        return TabularMdp(np.asarray(self.initial), np.asarray(self.transition), reward)


class PolicySpec(BaseModel):
    kind: Literal["stationary", "time_varying"] = "stationary"
    logits: list
    probabilities: Optional[list] = None

    def build(self) -> AnyPolicy:
        return policy_from_dict(self.model_dump())


def _parse(schema: type[BaseModel], payload):
    try:
        return schema.model_validate(payload).build()
    except ValidationError as exc:
        raise ParseError(f"invalid {schema.__name__}: {exc.errors(include_url=False)}") from exc
    except (InvalidParameter, ValueError) as exc:
        raise ParseError(f"invalid {schema.__name__}: {exc}") from exc


def read_payload(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc}") from exc


def parse_rate(payload: dict) -> RateFunction:
    try:
        return build_rate(_rate_adapter.validate_python(payload))
    except ValidationError as exc:
        raise ParseError(f"invalid rate: {exc.errors(include_url=False)}") from exc
    except (InvalidParameter, ValueError) as exc:
        raise ParseError(f"invalid rate: {exc}") from exc


def parse_model(payload: dict) -> AdpModel:
    return _parse(ModelSpec, payload)


def parse_network(payload: dict) -> SpikingNetwork:
    return _parse(NetworkSpec, payload)


def parse_mdp(payload: dict) -> TabularMdp:
    return _parse(MdpSpec, payload)


def parse_policy(payload: dict) -> AnyPolicy:
    return _parse(PolicySpec, payload)
