import json
import math

import numpy as np
import pytest

from app.services.adp_core import constant_rate_model
from app.services.maxent_rl import TabularMdp
from app.utils.streams import make_stream

SEED = 42


@pytest.fixture
def rng():
    return make_stream(SEED)


@pytest.fixture
def stream():
    """Independent pinned streams: stream(1), stream(2), ..."""
    return lambda *key: make_stream(SEED, *key)


# rates (1, 3) in every state; a and b move the state around a 3-cycle
THREE_STATE_TRANSITIONS = [
    [[0.2, 0.5, 0.3], [0.3, 0.2, 0.5], [0.5, 0.3, 0.2]],
    [[0.1, 0.1, 0.8], [0.8, 0.1, 0.1], [0.1, 0.8, 0.1]],
]


@pytest.fixture
def three_state_model():
    return constant_rate_model([[1.0, 3.0]] * 3, THREE_STATE_TRANSITIONS, action_names=["a", "b"])


@pytest.fixture
def three_state_spec():
    rates = {f"{x},{a}": {"kind": "constant", "level": level} for x in range(3) for a, level in (("a", 1.0), ("b", 3.0))}
    transitions = {f"{x},{name}": THREE_STATE_TRANSITIONS[i][x] for x in range(3) for i, name in enumerate(("a", "b"))}
    return {"states": 3, "actions": ["a", "b"], "rates": rates, "transitions": transitions, "initial": 0}


def counting_spec(rate: float, max_count: int = 40) -> dict:
    states = max_count + 1
    rates = {f"{x},0": {"kind": "constant", "level": rate} for x in range(max_count)}
    transitions = {f"{x},0": [1.0 if y == x + 1 else 0.0 for y in range(states)] for x in range(max_count)}
    return {"states": states, "actions": ["Succ"], "rates": rates, "transitions": transitions, "initial": 0}


def write_spec(path, payload) -> str:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def bandit_spec(rewards=(0.0, math.log(3.0))) -> dict:
    return {"S": 1, "A": len(rewards), "initial": [1.0], "transition": [[[1.0]] * len(rewards)], "reward": [list(rewards)]}


@pytest.fixture
def bandit():
    spec = bandit_spec()
    return TabularMdp(spec["initial"], spec["transition"], spec["reward"])


def random_mdp(rng: np.random.Generator, states: int, actions: int, uniform_start: bool = False) -> TabularMdp:
    initial = np.full(states, 1.0 / states) if uniform_start else rng.dirichlet(np.ones(states))
    transition = rng.dirichlet(np.ones(states), size=(states, actions))
    reward = rng.normal(size=(states, actions))
    return TabularMdp(initial, transition, reward)
