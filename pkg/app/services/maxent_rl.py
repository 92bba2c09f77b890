"""Max-ent RL as a KL between two action-driven trajectory laws.

The true law q draws waits from Exp(ρ) and actions from the policy; the model
law p draws actions at rates λ(a, s) = e^{r(s, a)}. Both share the initial
distribution and the environment transitions, so

    I(q‖p) = Σ_n { -E[r - log π] + E[λ(S_{n-1})]/ρ - 1 + log ρ }

and for large ρ minimising it is maximising reward plus policy entropy.

Arrays: reward[s, a], transition[s, a, s'], policy probabilities [s, a]
(stationary) or [n, s, a] (time-varying). Expectations marked exact are
computed by the forward state-marginal recursion, never by sampling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from app.config import DEFAULT_RHO, DIVERGENCE_PATIENCE, PMF_TOL
from app.errors import DivergenceDetected, InvalidParameter, ZeroProbabilityEvent
from app.utils.validation import require_pmf

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TabularMdp:
    initial: np.ndarray
    transition: np.ndarray
    reward: np.ndarray

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=float)
        transition = np.asarray(self.transition, dtype=float)
        reward = np.asarray(self.reward, dtype=float)
        if reward.ndim != 2:
            raise InvalidParameter("reward must be an S×A matrix")
        S, A = reward.shape
        if initial.shape != (S,) or transition.shape != (S, A, S):
            raise InvalidParameter("initial must have shape (S,) and transition (S, A, S)")
        require_pmf(initial, "initial distribution")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(axis=2) - 1.0) > PMF_TOL):
            raise InvalidParameter("every transition slice must be a pmf")
        if not np.all(np.isfinite(reward)):
            raise InvalidParameter("rewards must be finite")
        for name, arr in (("initial", initial), ("transition", transition), ("reward", reward)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def state_count(self) -> int:
        return self.reward.shape[0]

    @property
    def action_count(self) -> int:
        return self.reward.shape[1]

    def log_total_rate(self) -> np.ndarray:
        """log λ(s) = log Σ_a e^{r(s, a)}."""
        return logsumexp(self.reward, axis=1)

    def total_rate(self) -> np.ndarray:
        return np.exp(self.log_total_rate())

    def to_dict(self) -> dict:
        return {
            "S": self.state_count,
            "A": self.action_count,
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }


@dataclass(eq=False)
class Policy:
    """Stationary softmax policy π(a|s) ∝ exp θ[s, a]."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if self.logits.ndim != 2 or not np.all(np.isfinite(self.logits)):
            raise InvalidParameter("policy logits must be a finite S×A matrix")

    @classmethod
    def uniform(cls, mdp: TabularMdp) -> "Policy":
        return cls(np.zeros((mdp.state_count, mdp.action_count)))

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits, axis=-1)

    @property
    def log_probabilities(self) -> np.ndarray:
        return log_softmax(self.logits, axis=-1)

    def table(self, horizon: int) -> np.ndarray:
        return np.broadcast_to(self.probabilities, (horizon,) + self.logits.shape)

    def log_table(self, horizon: int) -> np.ndarray:
        return np.broadcast_to(self.log_probabilities, (horizon,) + self.logits.shape)

    def to_dict(self) -> dict:
        return {"kind": "stationary", "logits": self.logits.tolist(), "probabilities": self.probabilities.tolist()}


@dataclass(eq=False)
class TimeVaryingPolicy(Policy):
    """One logit table per step: logits[n, s, a] drives A_{n+1} given S_n."""

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if self.logits.ndim != 3 or not np.all(np.isfinite(self.logits)):
            raise InvalidParameter("time-varying logits must be a finite N×S×A array")

    @classmethod
    def uniform(cls, mdp: TabularMdp, horizon: int = 1) -> "TimeVaryingPolicy":
        return cls(np.zeros((horizon, mdp.state_count, mdp.action_count)))

    def _check(self, horizon: int) -> None:
        if self.logits.shape[0] != horizon:
            raise InvalidParameter(f"policy covers {self.logits.shape[0]} steps, horizon is {horizon}")

    def table(self, horizon: int) -> np.ndarray:
        self._check(horizon)
        return self.probabilities

    def log_table(self, horizon: int) -> np.ndarray:
        self._check(horizon)
        return self.log_probabilities

    def to_dict(self) -> dict:
        return {"kind": "time_varying", "logits": self.logits.tolist(), "probabilities": self.probabilities.tolist()}


AnyPolicy = Union[Policy, TimeVaryingPolicy]


def policy_from_dict(payload: dict) -> AnyPolicy:
    logits = payload.get("logits")
    if logits is None:
        raise InvalidParameter("policy needs logits")
    if payload.get("kind", "stationary") == "time_varying":
        return TimeVaryingPolicy(np.asarray(logits, dtype=float))
    return Policy(np.asarray(logits, dtype=float))


@dataclass(frozen=True)
class KlConfig:
    rho: float = DEFAULT_RHO
    horizon: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise InvalidParameter("rho must be > 0")
        if self.horizon < 1:
            raise InvalidParameter("horizon must be >= 1")


@dataclass(frozen=True)
class RlStep:
    wait: float
    action: int
    state: int


@dataclass(frozen=True)
class RlTrajectory:
    initial_state: int
    steps: tuple[RlStep, ...] = ()

    def __post_init__(self):
        if any(not s.wait > 0 for s in self.steps):
            raise InvalidParameter("waits must be > 0")

    def previous_states(self) -> list[int]:
        return [self.initial_state] + [s.state for s in self.steps[:-1]]


def _check_policy(mdp: TabularMdp, policy: AnyPolicy) -> None:
    if policy.logits.shape[-2:] != (mdp.state_count, mdp.action_count):
        raise InvalidParameter("policy shape does not match the MDP")


# --- sampling and densities -----------------------------------------------------


def sample_true_trajectory(mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig, rng: np.random.Generator) -> RlTrajectory:
    _check_policy(mdp, policy)
    pi = policy.table(cfg.horizon)
    s = int(rng.choice(mdp.state_count, p=mdp.initial))
    s0 = s
    steps = []
    for n in range(cfg.horizon):
        w = rng.exponential(1.0 / cfg.rho)
        a = int(rng.choice(mdp.action_count, p=pi[n, s]))
        s = int(rng.choice(mdp.state_count, p=mdp.transition[s, a]))
        steps.append(RlStep(float(w), a, s))
    return RlTrajectory(s0, tuple(steps))


def _categorical(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cumulative = np.cumsum(rows, axis=1)
    u = rng.random((rows.shape[0], 1)) * cumulative[:, -1:]
    return np.minimum((u >= cumulative).sum(axis=1), rows.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    initial_states: np.ndarray
    waits: np.ndarray
    actions: np.ndarray
    states: np.ndarray

    @property
    def previous_states(self) -> np.ndarray:
        return np.column_stack([self.initial_states, self.states[:, :-1]])


def sample_true_batch(mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig, count: int, rng) -> TrajectoryBatch:
    """`count` trajectories of the true law, drawn column by column."""
    _check_policy(mdp, policy)
    pi = policy.table(cfg.horizon)
    s = _categorical(np.broadcast_to(mdp.initial, (count, mdp.state_count)), rng)
    s0 = s
    waits = rng.exponential(1.0 / cfg.rho, size=(count, cfg.horizon))
    actions = np.empty((count, cfg.horizon), dtype=int)
    states = np.empty((count, cfg.horizon), dtype=int)
    for n in range(cfg.horizon):
        actions[:, n] = _categorical(pi[n, s], rng)
        s = _categorical(mdp.transition[s, actions[:, n]], rng)
        states[:, n] = s
    return TrajectoryBatch(s0, waits, actions, states)


def _log_or_raise(p: float, what: str) -> float:
    if p <= 0:
        raise ZeroProbabilityEvent(f"{what} has probability zero")
    return math.log(p)


def _shared_log_terms(mdp: TabularMdp, traj: RlTrajectory) -> float:
    total = _log_or_raise(mdp.initial[traj.initial_state], f"initial state {traj.initial_state}")
    for prev, step in zip(traj.previous_states(), traj.steps):
        total += _log_or_raise(mdp.transition[prev, step.action, step.state], f"transition {prev}->{step.state}")
    return total


def _check_trajectory(mdp: TabularMdp, cfg: KlConfig, traj: RlTrajectory) -> None:
    if len(traj.steps) != cfg.horizon:
        raise InvalidParameter(f"trajectory has {len(traj.steps)} steps, horizon is {cfg.horizon}")
    states = [traj.initial_state] + [s.state for s in traj.steps]
    if any(not 0 <= x < mdp.state_count for x in states) or any(
        not 0 <= s.action < mdp.action_count for s in traj.steps
    ):
        raise InvalidParameter("trajectory index out of range")


def true_log_density(mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig, traj: RlTrajectory) -> float:
    _check_trajectory(mdp, cfg, traj)
    log_pi = policy.log_table(cfg.horizon)
    total = _shared_log_terms(mdp, traj)
    for n, (prev, step) in enumerate(zip(traj.previous_states(), traj.steps)):
        total += -cfg.rho * step.wait + math.log(cfg.rho) + log_pi[n, prev, step.action]
    return float(total)


def model_log_density(mdp: TabularMdp, cfg: KlConfig, traj: RlTrajectory) -> float:
    _check_trajectory(mdp, cfg, traj)
    rates = mdp.total_rate()
    total = _shared_log_terms(mdp, traj)
    for prev, step in zip(traj.previous_states(), traj.steps):
        total += -rates[prev] * step.wait + mdp.reward[prev, step.action]
    return float(total)


def batch_log_ratio(mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig, batch: TrajectoryBatch) -> np.ndarray:
    """log q - log p per trajectory; the shared initial and transition terms cancel."""
    log_pi = policy.log_table(cfg.horizon)
    prev = batch.previous_states
    steps = np.arange(cfg.horizon)
    rates = mdp.total_rate()[prev]
    per_step = (
        (rates - cfg.rho) * batch.waits
        + math.log(cfg.rho)
        + log_pi[steps, prev, batch.actions]
        - mdp.reward[prev, batch.actions]
    )
    return per_step.sum(axis=1)


# --- exact expectations ------------------------------------------------------------


def state_marginals(mdp: TabularMdp, policy: AnyPolicy, horizon: int) -> np.ndarray:
    """d[n, s] = q(S_n = s) for n = 0..horizon-1."""
    _check_policy(mdp, policy)
    pi = policy.table(horizon)
    d = np.empty((horizon, mdp.state_count))
    d[0] = mdp.initial
    for n in range(1, horizon):
        d[n] = np.einsum("s,sa,sat->t", d[n - 1], pi[n - 1], mdp.transition)
    return d


def _entropy_reward(pi: np.ndarray, log_pi: np.ndarray, reward: np.ndarray) -> np.ndarray:
    return np.sum(pi * (reward - log_pi), axis=-1)


def maxent_objective(mdp: TabularMdp, policy: AnyPolicy, horizon: int) -> float:
    """Σ_n E_q[r(A_n, S_{n-1})] + E_q[H(π(·|S_{n-1}))], exact."""
    d = state_marginals(mdp, policy, horizon)
    per_state = _entropy_reward(policy.table(horizon), policy.log_table(horizon), mdp.reward)
    return float(np.sum(d * per_state))


def _wait_penalty(mdp: TabularMdp, rho: float) -> np.ndarray:
    """E[λ(s)]/ρ - 1 + log ρ, per state."""
    return mdp.total_rate() / rho - 1.0 + math.log(rho)


def kl_closed_form(mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig) -> float:
    d = state_marginals(mdp, policy, cfg.horizon)
    per_state = -_entropy_reward(policy.table(cfg.horizon), policy.log_table(cfg.horizon), mdp.reward)
    return float(np.sum(d * (per_state + _wait_penalty(mdp, cfg.rho))))


@dataclass(frozen=True)
class KlEstimate:
    estimate: float
    stderr: float


def kl_monte_carlo(
    mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig, n_samples: int, rng: np.random.Generator
) -> KlEstimate:
    if n_samples < 2:
        raise InvalidParameter("need at least 2 samples")
    ratios = batch_log_ratio(mdp, policy, cfg, sample_true_batch(mdp, policy, cfg, n_samples, rng))
    return KlEstimate(float(ratios.mean()), float(ratios.std(ddof=1) / math.sqrt(n_samples)))


# --- gradients -----------------------------------------------------------------------


def _objective_gradient(
    mdp: TabularMdp, policy: AnyPolicy, horizon: int, reward: np.ndarray, kappa: float, bonus: np.ndarray
) -> np.ndarray:
    """∇θ of Σ_n Σ_s d_n(s)[Σ_a π_n(R - κ log π_n) + b(s)] by a backward pass."""
    pi = policy.table(horizon)
    log_pi = policy.log_table(horizon)
    d = state_marginals(mdp, policy, horizon)
    value = np.zeros(mdp.state_count)
    grads = np.empty((horizon, mdp.state_count, mdp.action_count))
    for n in reversed(range(horizon)):
        continuation = mdp.transition @ value
        c = reward - kappa * log_pi[n] + continuation
        g = d[n][:, None] * (c - kappa)
        grads[n] = pi[n] * (g - np.sum(pi[n] * g, axis=1, keepdims=True))
        value = np.sum(pi[n] * c, axis=1) + bonus
    if isinstance(policy, TimeVaryingPolicy):
        return grads
    return grads.sum(axis=0)


def maxent_gradient(mdp: TabularMdp, policy: AnyPolicy, horizon: int) -> np.ndarray:
    return _objective_gradient(mdp, policy, horizon, mdp.reward, 1.0, np.zeros(mdp.state_count))


def kl_gradient(mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig) -> np.ndarray:
    return _objective_gradient(mdp, policy, cfg.horizon, -mdp.reward, -1.0, _wait_penalty(mdp, cfg.rho))


# --- optimal policies ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SoftValueSolution:
    soft_q: np.ndarray
    soft_v: np.ndarray
    optimal_policy: TimeVaryingPolicy


def _soft_backup(mdp: TabularMdp, horizon: int, penalty: np.ndarray) -> SoftValueSolution:
    if horizon < 1:
        raise InvalidParameter("horizon must be >= 1")
    q = np.empty((horizon, mdp.state_count, mdp.action_count))
    v = np.empty((horizon, mdp.state_count))
    next_v = np.zeros(mdp.state_count)
    for n in reversed(range(horizon)):
        q[n] = mdp.reward + mdp.transition @ next_v
        v[n] = logsumexp(q[n], axis=1) - penalty
        next_v = v[n]
    return SoftValueSolution(q, v, TimeVaryingPolicy(q.copy()))


def soft_value_iteration(mdp: TabularMdp, horizon: int) -> SoftValueSolution:
    """Q_n = r + E[V_{n+1}], V_n = logsumexp_a Q_n, π*_n = exp(Q_n - V_n); V_N = 0."""
    return _soft_backup(mdp, horizon, np.zeros(mdp.state_count))


def kl_optimal_policy(mdp: TabularMdp, cfg: KlConfig) -> TimeVaryingPolicy:
    """Exact minimiser of kl_closed_form over time-varying policies."""
    return _soft_backup(mdp, cfg.horizon, _wait_penalty(mdp, cfg.rho)).optimal_policy


def policy_gap(policy: AnyPolicy, solution: SoftValueSolution) -> float:
    """ℓ∞ distance between the policy and π* over every step, state and action."""
    horizon = solution.soft_q.shape[0]
    return float(np.max(np.abs(policy.table(horizon) - solution.optimal_policy.probabilities)))


@dataclass(frozen=True)
class RhoSweepRow:
    rho: float
    policy_gap: float
    objective_gap: float
    kl: float


def rho_sweep(mdp: TabularMdp, horizon: int, rhos: Sequence[float] = (1e2, 1e4, 1e6)) -> list[RhoSweepRow]:
    """How far the KL optimum sits from the max-ent optimum as ρ grows."""
    solution = soft_value_iteration(mdp, horizon)
    best = maxent_objective(mdp, solution.optimal_policy, horizon)
    rows = []
    for rho in rhos:
        cfg = KlConfig(rho=float(rho), horizon=horizon)
        policy = kl_optimal_policy(mdp, cfg)
        rows.append(
            RhoSweepRow(
                rho=float(rho),
                policy_gap=policy_gap(policy, solution),
                objective_gap=best - maxent_objective(mdp, policy, horizon),
                kl=kl_closed_form(mdp, policy, cfg),
            )
        )
        logger.info("rho=%g policy gap %.3e", rho, rows[-1].policy_gap)
    return rows


# --- training --------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.5
    steps: int = 2000
    mode: Literal["exact_gradient", "reinforce"] = "exact_gradient"
    batch_size: int = 256
    time_varying: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise InvalidParameter("learning_rate must be > 0")
        if self.steps < 1:
            raise InvalidParameter("steps must be >= 1")
        if self.mode not in ("exact_gradient", "reinforce"):
            raise InvalidParameter(f"unknown optimizer mode {self.mode!r}")
        if self.batch_size < 2:
            raise InvalidParameter("batch_size must be >= 2")


@dataclass(frozen=True)
class TrainingStep:
    step: int
    kl: float
    maxent_objective: float
    grad_norm: float


def reinforce_gradient(
    mdp: TabularMdp, policy: AnyPolicy, cfg: KlConfig, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Score-function estimate of ∇θ KL with a batch-mean baseline."""
    batch = sample_true_batch(mdp, policy, cfg, batch_size, rng)
    ratios = batch_log_ratio(mdp, policy, cfg, batch)
    advantage = ratios - ratios.mean()
    pi = policy.table(cfg.horizon)
    prev = batch.previous_states
    grads = np.zeros((cfg.horizon, mdp.state_count, mdp.action_count))
    for n in range(cfg.horizon):
        score = -pi[n, prev[:, n]]
        score[np.arange(batch_size), batch.actions[:, n]] += 1.0
        np.add.at(grads[n], prev[:, n], advantage[:, None] * score)
    grads /= batch_size
    if isinstance(policy, TimeVaryingPolicy):
        return grads
    return grads.sum(axis=0)


def train_policy(
    mdp: TabularMdp,
    cfg: KlConfig,
    optimizer: OptimizerConfig,
    rng: np.random.Generator,
    initial: Optional[AnyPolicy] = None,
    on_step: Optional[Callable[[TrainingStep], None]] = None,
) -> AnyPolicy:
    """Gradient descent on kl_closed_form; raises DivergenceDetected when the KL keeps rising."""
    if initial is not None:
        policy = type(initial)(np.array(initial.logits, dtype=float))
    elif optimizer.time_varying:
        policy = TimeVaryingPolicy.uniform(mdp, cfg.horizon)
    else:
        policy = Policy.uniform(mdp)
    _check_policy(mdp, policy)

    previous = kl_closed_form(mdp, policy, cfg)
    last_good = type(policy)(policy.logits.copy())
    rising = 0
    for step in range(1, optimizer.steps + 1):
        if optimizer.mode == "exact_gradient":
            grad = kl_gradient(mdp, policy, cfg)
        else:
            grad = reinforce_gradient(mdp, policy, cfg, optimizer.batch_size, rng)
        policy.logits = policy.logits - optimizer.learning_rate * grad
        kl = kl_closed_form(mdp, policy, cfg)
        if not math.isfinite(kl) or not np.all(np.isfinite(policy.logits)):
            raise DivergenceDetected(f"non-finite objective at step {step}", last_good=last_good, step=step)
        if kl > previous + 1e-12 * max(1.0, abs(previous)):
            rising += 1
            if rising >= DIVERGENCE_PATIENCE:
                raise DivergenceDetected(
                    f"KL rose for {rising} consecutive steps", last_good=last_good, step=step
                )
        else:
            rising = 0
            last_good = type(policy)(policy.logits.copy())
        previous = kl
        if on_step is not None:
            on_step(TrainingStep(step, kl, maxent_objective(mdp, policy, cfg.horizon), float(np.linalg.norm(grad))))
    logger.info("trained %s policy for %d steps, final KL %.6g", optimizer.mode, optimizer.steps, previous)
    return policy
