import math

import numpy as np
import pytest
from scipy import integrate

from conftest import random_mdp
from app.errors import DivergenceDetected, InvalidParameter, ZeroProbabilityEvent
from app.services import maxent_rl
from app.services.maxent_rl import (
    KlConfig,
    OptimizerConfig,
    Policy,
    RlStep,
    RlTrajectory,
    TabularMdp,
    TimeVaryingPolicy,
    kl_closed_form,
    kl_gradient,
    kl_monte_carlo,
    kl_optimal_policy,
    maxent_gradient,
    maxent_objective,
    model_log_density,
    policy_from_dict,
    policy_gap,
    rho_sweep,
    sample_true_batch,
    sample_true_trajectory,
    soft_value_iteration,
    state_marginals,
    train_policy,
    true_log_density,
)
from app.services.stat_tests import category_counts, chi2_goodness, mean_check


def single_action_mdp():
    return TabularMdp([1.0], [[[1.0]]], [[0.0]])


def two_action_mdp(rewards=(0.0, 0.0)):
    return TabularMdp([1.0], [[[1.0], [1.0]]], [list(rewards)])


def random_policy(rng, mdp, horizon=None):
    if horizon is None:
        return Policy(rng.normal(size=(mdp.state_count, mdp.action_count)))
    return TimeVaryingPolicy(rng.normal(size=(horizon, mdp.state_count, mdp.action_count)))


class TestPolicies:
    def test_uniform(self, bandit):
        np.testing.assert_allclose(Policy.uniform(bandit).probabilities, [[0.5, 0.5]])

    def test_round_trip(self, bandit):
        policy = TimeVaryingPolicy(np.array([[[0.0, 1.0]], [[2.0, -1.0]]]))
        back = policy_from_dict(policy.to_dict())
        assert isinstance(back, TimeVaryingPolicy)
        np.testing.assert_array_equal(back.logits, policy.logits)

    def test_horizon_mismatch(self, bandit):
        policy = TimeVaryingPolicy.uniform(bandit, horizon=2)
        with pytest.raises(InvalidParameter):
            kl_closed_form(bandit, policy, KlConfig(rho=2.0, horizon=3))

    def test_invalid_config(self):
        with pytest.raises(InvalidParameter):
            KlConfig(rho=0.0)
        with pytest.raises(InvalidParameter):
            KlConfig(horizon=0)

    def test_invalid_mdp(self):
        with pytest.raises(InvalidParameter):
            TabularMdp([0.5], [[[1.0]]], [[0.0]])
        with pytest.raises(InvalidParameter):
            TabularMdp([1.0], [[[0.5]]], [[0.0]])


class TestSampling:
    def test_waits(self, bandit, rng):
        batch = sample_true_batch(bandit, Policy.uniform(bandit), KlConfig(rho=2.0, horizon=3), 20000, rng)
        assert mean_check("wait", batch.waits.ravel(), 0.5, z=4.0).passed

    def test_actions_follow_policy(self, bandit, rng):
        policy = Policy(bandit.reward.copy())
        batch = sample_true_batch(bandit, policy, KlConfig(rho=2.0), 20000, rng)
        check = chi2_goodness("actions", category_counts(batch.actions.ravel(), range(2)), [0.25, 0.75])
        assert check.passed, check

    def test_single_trajectory(self, rng):
        mdp = random_mdp(rng, 3, 2)
        traj = sample_true_trajectory(mdp, Policy.uniform(mdp), KlConfig(rho=5.0, horizon=4), rng)
        assert len(traj.steps) == 4
        assert all(s.wait > 0 for s in traj.steps)

    def test_state_marginals_match_sampling(self, rng):
        mdp = random_mdp(rng, 3, 2)
        policy = random_policy(rng, mdp)
        d = state_marginals(mdp, policy, 3)
        batch = sample_true_batch(mdp, policy, KlConfig(rho=1.0, horizon=3), 20000, rng)
        check = chi2_goodness("s2", category_counts(batch.previous_states[:, 2], range(3)), d[2])
        assert check.passed, check


class TestDensities:
    def test_examples(self):
        mdp = single_action_mdp()
        cfg = KlConfig(rho=1.0, horizon=1)
        traj = RlTrajectory(0, (RlStep(1.0, 0, 0),))
        np.testing.assert_allclose(true_log_density(mdp, Policy.uniform(mdp), cfg, traj), -1.0)
        np.testing.assert_allclose(model_log_density(mdp, cfg, traj), -1.0)

    @pytest.mark.parametrize("which", ["true", "model"])
    def test_normalized(self, bandit, which):
        cfg = KlConfig(rho=2.0, horizon=1)
        policy = Policy(np.array([[0.3, -0.2]]))

        def density(w, a):
            traj = RlTrajectory(0, (RlStep(w, a, 0),))
            if which == "true":
                return math.exp(true_log_density(bandit, policy, cfg, traj))
            return math.exp(model_log_density(bandit, cfg, traj))

        total = sum(integrate.quad(density, 0.0, 50.0, args=(a,))[0] for a in range(2))
        np.testing.assert_allclose(total, 1.0, atol=1e-7)

    def test_zero_probability(self):
        mdp = TabularMdp([1.0, 0.0], np.full((2, 1, 2), 0.5), [[0.0], [0.0]])
        traj = RlTrajectory(1, (RlStep(1.0, 0, 0),))
        with pytest.raises(ZeroProbabilityEvent):
            true_log_density(mdp, Policy.uniform(mdp), KlConfig(rho=1.0), traj)

    def test_rejects_non_positive_wait(self):
        with pytest.raises(InvalidParameter):
            RlTrajectory(0, (RlStep(0.0, 0, 0),))


class TestKl:
    def test_matched_laws(self, bandit):
        # π ∝ e^r and ρ = λ make the two laws identical
        assert abs(kl_closed_form(bandit, Policy(bandit.reward.copy()), KlConfig(rho=4.0))) < 1e-12

    def test_monte_carlo_agrees(self, stream):
        for i in range(10):
            rng = stream(i)
            mdp = random_mdp(rng, 3, 2)
            policy = random_policy(rng, mdp)
            cfg = KlConfig(rho=3.0, horizon=3)
            exact = kl_closed_form(mdp, policy, cfg)
            mc = kl_monte_carlo(mdp, policy, cfg, 20000, rng)
            assert abs(mc.estimate - exact) < 3.5 * mc.stderr, (i, exact, mc)

    def test_maxent_examples(self):
        assert maxent_objective(two_action_mdp(), Policy.uniform(two_action_mdp()), 1) == pytest.approx(math.log(2.0))
        assert maxent_objective(single_action_mdp(), Policy.uniform(single_action_mdp()), 1) == 0.0
        assert maxent_objective(two_action_mdp(), Policy.uniform(two_action_mdp()), 2) == pytest.approx(math.log(4.0))

    def test_rho_identity(self, rng):
        mdp = random_mdp(rng, 4, 3)
        policy = random_policy(rng, mdp)
        for rho in (0.5, 3.0, 1e6):
            cfg = KlConfig(rho=rho, horizon=3)
            d = state_marginals(mdp, policy, 3)
            penalty = np.sum(d * (mdp.total_rate() / rho - 1.0 + math.log(rho)))
            np.testing.assert_allclose(kl_closed_form(mdp, policy, cfg), -maxent_objective(mdp, policy, 3) + penalty, atol=1e-10)


class TestSoftValues:
    def test_bandit(self, bandit):
        solution = soft_value_iteration(bandit, 1)
        np.testing.assert_allclose(solution.soft_v[0], [math.log(4.0)])
        np.testing.assert_allclose(solution.optimal_policy.probabilities[0], [[0.25, 0.75]])

    def test_optimal_objective_equals_value(self, rng):
        mdp = random_mdp(rng, 4, 3)
        solution = soft_value_iteration(mdp, 3)
        best = maxent_objective(mdp, solution.optimal_policy, 3)
        np.testing.assert_allclose(best, mdp.initial @ solution.soft_v[0])
        for _ in range(5):
            assert maxent_objective(mdp, random_policy(rng, mdp, 3), 3) < best

    def test_kl_optimum_is_stationary_point(self, rng):
        mdp = random_mdp(rng, 3, 2)
        cfg = KlConfig(rho=2.0, horizon=3)
        optimum = kl_optimal_policy(mdp, cfg)
        np.testing.assert_allclose(kl_gradient(mdp, optimum, cfg), 0.0, atol=1e-10)
        for _ in range(5):
            assert kl_closed_form(mdp, random_policy(rng, mdp, 3), cfg) > kl_closed_form(mdp, optimum, cfg)

    def test_rho_sweep(self, rng):
        mdp = random_mdp(rng, 3, 2)
        rows = rho_sweep(mdp, 3)
        gaps = [row.policy_gap for row in rows]
        assert gaps[0] > gaps[1] > gaps[2]
        assert all(row.objective_gap >= -1e-12 for row in rows)


def finite_difference(fn, logits, h=1e-5):
    grad = np.zeros_like(logits)
    for index in np.ndindex(logits.shape):
        up, down = logits.copy(), logits.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (fn(up) - fn(down)) / (2 * h)
    return grad


class TestGradients:
    @pytest.mark.parametrize("time_varying", [False, True])
    def test_maxent_gradient(self, rng, time_varying):
        mdp = random_mdp(rng, 3, 2)
        policy = random_policy(rng, mdp, 3 if time_varying else None)
        kind = type(policy)
        numeric = finite_difference(lambda th: maxent_objective(mdp, kind(th), 3), policy.logits)
        np.testing.assert_allclose(maxent_gradient(mdp, policy, 3), numeric, rtol=1e-4, atol=1e-7)

    @pytest.mark.parametrize("time_varying", [False, True])
    def test_kl_gradient(self, rng, time_varying):
        mdp = random_mdp(rng, 3, 2)
        policy = random_policy(rng, mdp, 3 if time_varying else None)
        cfg = KlConfig(rho=2.0, horizon=3)
        kind = type(policy)
        numeric = finite_difference(lambda th: kl_closed_form(mdp, kind(th), cfg), policy.logits)
        np.testing.assert_allclose(kl_gradient(mdp, policy, cfg), numeric, rtol=1e-4, atol=1e-7)

    def test_large_rho_matches_maxent(self, rng):
        mdp = random_mdp(rng, 3, 2)
        policy = random_policy(rng, mdp)
        gap = kl_gradient(mdp, policy, KlConfig(rho=1e8, horizon=3)) + maxent_gradient(mdp, policy, 3)
        assert np.max(np.abs(gap)) < 1e-6


class TestTraining:
    def test_bandit(self, bandit, rng):
        policy = train_policy(bandit, KlConfig(rho=1e6), OptimizerConfig(learning_rate=0.5, steps=2000), rng)
        np.testing.assert_allclose(policy.probabilities, [[0.25, 0.75]], atol=1e-3)

    def test_random_mdps(self, stream):
        for i in range(5):
            rng = stream(i)
            mdp = random_mdp(rng, 5, 3, uniform_start=True)
            cfg = KlConfig(rho=1e6, horizon=1)
            policy = train_policy(mdp, cfg, OptimizerConfig(learning_rate=1.0, steps=3000), rng)
            assert policy_gap(policy, soft_value_iteration(mdp, 1)) < 1e-2

    def test_time_varying(self, rng):
        mdp = random_mdp(rng, 3, 2, uniform_start=True)
        cfg = KlConfig(rho=1e6, horizon=2)
        policy = train_policy(mdp, cfg, OptimizerConfig(learning_rate=1.0, steps=3000, time_varying=True), rng)
        assert isinstance(policy, TimeVaryingPolicy)
        optimum = kl_closed_form(mdp, kl_optimal_policy(mdp, cfg), cfg)
        assert kl_closed_form(mdp, policy, cfg) - optimum < 1e-4

    def test_reinforce(self, bandit, rng):
        optimizer = OptimizerConfig(learning_rate=0.1, steps=1500, mode="reinforce", batch_size=512)
        policy = train_policy(bandit, KlConfig(rho=2.0), optimizer, rng)
        np.testing.assert_allclose(policy.probabilities, [[0.25, 0.75]], atol=0.05)

    def test_on_step(self, bandit, rng):
        seen = []
        train_policy(bandit, KlConfig(rho=2.0), OptimizerConfig(steps=20), rng, on_step=seen.append)
        assert [s.step for s in seen] == list(range(1, 21))
        assert seen[-1].kl <= seen[0].kl

    def test_divergence(self, bandit, rng, monkeypatch):
        ascent = maxent_rl.kl_gradient
        monkeypatch.setattr(maxent_rl, "kl_gradient", lambda *args: -ascent(*args))
        with pytest.raises(DivergenceDetected) as excinfo:
            train_policy(bandit, KlConfig(rho=2.0), OptimizerConfig(learning_rate=0.5, steps=500), rng)
        assert excinfo.value.step == 50
        np.testing.assert_array_equal(excinfo.value.last_good.logits, [[0.0, 0.0]])
