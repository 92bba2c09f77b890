import json

import numpy as np
import pytest

from conftest import bandit_spec, counting_spec
from app.errors import ParseError
from app.schemas import parse_mdp, parse_model, parse_network, parse_policy, read_payload
from app.services.adp_core import total_rate
from app.services.maxent_rl import TimeVaryingPolicy
from app.services.rate_model import ExpAffine, PiecewiseConstant


class TestModelSpec:
    def test_three_state(self, three_state_spec):
        model = parse_model(three_state_spec)
        assert [a.name for a in model.actions] == ["a", "b"]
        assert total_rate(model, 1, 0.0) == 4.0
        np.testing.assert_allclose(model.transition(0, model.actions[1], 0.3).probs, [0.1, 0.1, 0.8])

    def test_action_index_keys(self):
        spec = {"states": 1, "actions": ["a"], "rates": {"0,0": {"kind": "exp_affine", "offset": 0.0, "slope": -1.0}}}
        model = parse_model(spec)
        assert model.action_rate(0, model.actions[0]) == ExpAffine(0.0, -1.0)

    def test_missing_entries(self):
        model = parse_model(counting_spec(2.0, max_count=3))
        last = model.actions[0]
        assert total_rate(model, 3, 0.0) == 0.0
        np.testing.assert_allclose(model.transition(3, last, 0.0).probs, [0.0, 0.0, 0.0, 1.0])

    def test_wait_buckets(self):
        spec = {
            "states": 2,
            "actions": ["a"],
            "rates": {"0,a": {"kind": "piecewise", "breakpoints": [1.0], "levels": [1.0, 2.0]}},
            "transitions": {"0,a": [[1.0, 0.0], [0.0, 1.0]]},
            "wait_breakpoints": [0.5],
        }
        model = parse_model(spec)
        a = model.actions[0]
        assert isinstance(model.action_rate(0, a), PiecewiseConstant)
        np.testing.assert_allclose(model.transition(0, a, 0.2).probs, [1.0, 0.0])
        np.testing.assert_allclose(model.transition(0, a, 0.7).probs, [0.0, 1.0])

    @pytest.mark.parametrize(
        "change",
        [
            {"rates": {"0,c": {"kind": "constant", "level": 1.0}}},
            {"rates": {"5,a": {"kind": "constant", "level": 1.0}}},
            {"rates": {"0,a": {"kind": "constant", "level": -1.0}}},
            {"rates": {"0,a": {"kind": "hawkes"}}},
            {"transitions": {"0,a": [0.5, 0.4, 0.0]}},
            {"transitions": {"0,a": [1.0, 0.0]}},
            {"initial": 3},
            {"actions": []},
            {"colour": "red"},
        ],
    )
    def test_rejects(self, three_state_spec, change):
        with pytest.raises(ParseError):
            parse_model({**three_state_spec, **change})


class TestNetworkSpec:
    def test_builds(self):
        network = parse_network({"n": 1, "weights": [[0.0]], "tau": 2.0, "gain": 1.5, "u0": [0.3]})
        assert network.neuron_count == 1
        assert network.decay == 2.0
        assert network.reset_potential == 0.0

    @pytest.mark.parametrize(
        "change",
        [{"gain": 0.0}, {"tau": -1.0}, {"weights": [[0.0, 1.0]]}, {"u0": [0.0]}],
    )
    def test_rejects(self, change):
        spec = {"n": 2, "weights": [[0.0, 0.5], [0.5, 0.0]], "tau": 1.0, "gain": 1.0, "u0": [0.0, 0.0]}
        with pytest.raises(ParseError):
            parse_network({**spec, **change})


class TestMdpSpec:
    def test_bandit(self):
        mdp = parse_mdp(bandit_spec())
        np.testing.assert_allclose(mdp.total_rate(), [4.0])
        assert mdp.to_dict() == parse_mdp(mdp.to_dict()).to_dict()

    @pytest.mark.parametrize(
        "change",
        [{"initial": [0.5]}, {"reward": [[0.0]]}, {"transition": [[[1.0]]]}, {"A": 3}],
    )
    def test_rejects(self, change):
        with pytest.raises(ParseError):
            parse_mdp({**bandit_spec(), **change})


class TestPolicySpec:
    def test_time_varying(self):
        policy = parse_policy({"kind": "time_varying", "logits": [[[0.0, 1.0]]]})
        assert isinstance(policy, TimeVaryingPolicy)

    def test_rejects_ragged_logits(self):
        with pytest.raises(ParseError):
            parse_policy({"logits": [[0.0, 1.0], [0.0]]})


def test_read_payload(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"n": 1}))
    assert read_payload(path) == {"n": 1}
    path.write_text("{not json")
    with pytest.raises(ParseError):
        read_payload(path)
