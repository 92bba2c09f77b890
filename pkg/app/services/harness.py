"""Run drivers shared by the CLI and the HTTP routes.

Each run_* function takes a RunConfig, an optional pre-parsed payload (the HTTP
routes pass request bodies, the CLI passes nothing and the payload is read from
config paths) and returns a JSON-ready dict. Files are written only when
config.out is set.

Stochastic work is cut into replications or fixed-size blocks; replication r
always draws from stream (seed, key, r), so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Literal, Optional, Sequence, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import (
    BLOCK_SIZE,
    CHI2_P_FLOOR,
    DEFAULT_RHO,
    DEFAULT_SEED,
    DEFAULT_WORKERS,
    KS_CRITICAL_SCALE,
    N_SAMPLES,
)
from app.errors import BoundViolation, DivergenceDetected, InvalidParameter
from app.schemas import parse_mdp, parse_model, parse_network, parse_policy, parse_rate, read_payload
from app.services import stat_tests
from app.services.adp_core import (
    AdpModel,
    Horizon,
    MaxArrivals,
    MaxTime,
    Step,
    Tabular,
    Trajectory,
    Uniformized,
    check_uniformization_bound,
    sample_aaa_step,
    sample_iaa_step,
    simulate,
    strip_trivial,
)
from app.services.maxent_rl import (
    AnyPolicy,
    KlConfig,
    OptimizerConfig,
    TabularMdp,
    TrainingStep,
    kl_closed_form,
    kl_monte_carlo,
    maxent_objective,
    policy_gap,
    rho_sweep,
    soft_value_iteration,
    train_policy,
)
from app.services.point_process import (
    ArrivalPath,
    NoArrival,
    arrival_count_pmf,
    gap_uniforms,
    sample_path,
    sample_renewal_path,
)
from app.services.rate_model import Constant, PiecewiseConstant, RateFunction, majorant
from app.services.spiking_net import (
    SpikingNetwork,
    encode_potentials,
    inter_spike_intervals,
    simulate_spiking,
    spike_raster,
)
from app.utils.export import write_csv, write_json, write_jsonl
from app.utils.streams import block_sizes, make_stream

logger = logging.getLogger(__name__)

T = TypeVar("T")

FAULTS = ("swap_actions", "low_lambda_bar")

# stream keys, so that no two samplers in one run share draws
IAA_KEY, AAA_KEY, UNIFORMIZED_KEY, EVAL_KEY, PERMUTATION_KEY = range(5)


class Thresholds(BaseModel):
    ks_critical_scale: float = Field(default=KS_CRITICAL_SCALE, gt=0)
    chi2_p_floor: float = Field(default=CHI2_P_FLOOR, gt=0, lt=1)
    n_samples: int = Field(default=N_SAMPLES, ge=2)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["simulate", "point-process", "validate-equivalence", "rl-train", "rl-eval", "spiking-demo"]
    model: Optional[Path] = None
    policy: Optional[Path] = None
    sampler: Literal["iaa", "aaa", "unif"] = "iaa"
    lambda_bar: Optional[float] = Field(default=None, gt=0)
    beta: float = Field(default=1.0, gt=0)
    horizon_arrivals: Optional[int] = Field(default=None, ge=1)
    horizon_time: Optional[float] = Field(default=None, gt=0)
    seed: int = DEFAULT_SEED
    streams: int = Field(default=1, ge=1)
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)
    out: Optional[Path] = None
    rho: float = Field(default=DEFAULT_RHO, gt=0)
    steps: int = Field(default=2000, ge=1)
    lr: float = Field(default=0.5, gt=0)
    mode: Literal["exact_gradient", "reinforce"] = "exact_gradient"
    batch_size: int = Field(default=256, ge=2)
    time_varying: bool = False
    renewal: bool = False
    rhos: list[float] = Field(default_factory=lambda: [1e2, 1e4, 1e6])
    thresholds: Thresholds = Field(default_factory=Thresholds)
    faults: list[Literal["swap_actions", "low_lambda_bar"]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if self.command in ("simulate", "spiking-demo"):
            if self.horizon_arrivals is None and self.horizon_time is None:
                raise ValueError(f"{self.command} needs --horizon-arrivals or --horizon-time")
        if self.horizon_arrivals is not None and self.horizon_time is not None:
            raise ValueError("give either a horizon in arrivals or in time, not both")
        if self.command in ("spiking-demo", "point-process") and self.horizon_time is None:
            raise ValueError(f"{self.command} needs --horizon-time")
        if self.sampler == "unif":
            if self.lambda_bar is None:
                raise ValueError("the uniformized sampler needs --lambda-bar")
            if self.command == "simulate" and self.horizon_time is None:
                raise ValueError("the uniformized sampler needs --horizon-time")
        return self

    @property
    def horizon(self) -> Horizon:
        if self.horizon_time is not None:
            return MaxTime(self.horizon_time)
        return MaxArrivals(self.horizon_arrivals or 1)

    @property
    def rl_horizon(self) -> int:
        return self.horizon_arrivals or 1

    def kl_config(self) -> KlConfig:
        return KlConfig(rho=self.rho, horizon=self.rl_horizon)


def map_streams(fn: Callable[[int], T], count: int, workers: int) -> list[T]:
    """[fn(0), ..., fn(count-1)] in index order, over up to `workers` threads."""
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _load(config: RunConfig, path: Optional[Path], what: str, parse: Callable, given):
    if given is not None:
        return given
    if path is None:
        raise InvalidParameter(f"{config.command} needs a {what} file")
    return parse(read_payload(path))


def _sampler(config: RunConfig):
    return Uniformized(config.lambda_bar) if config.sampler == "unif" else config.sampler


# --- simulate ------------------------------------------------------------------


def _trajectory_summary(run: int, traj: Trajectory, actions: Sequence) -> list:
    waits = [r.w for r in traj.records]
    counts = stat_tests.category_counts([r.action.name for r in traj.records], [a.name for a in actions])
    mean_wait = float(np.mean(waits)) if waits else 0.0
    final_time = traj.records[-1].t if traj.records else 0.0
    return [run, len(traj), mean_wait, final_time] + counts.tolist()


def run_simulate(config: RunConfig, model: Optional[AdpModel] = None) -> dict:
    model = _load(config, config.model, "model", parse_model, model)
    sampler = _sampler(config)
    horizon = config.horizon
    if isinstance(sampler, Uniformized):
        check_uniformization_bound(model, sampler.lambda_bar, config.beta, horizon.time)

    def replicate(r: int) -> Trajectory:
        return simulate(model, sampler, config.beta, horizon, None, make_stream(config.seed, r))

    trajectories = map_streams(replicate, config.streams, config.workers)
    actions = list(model.actions)
    if isinstance(sampler, Uniformized):
        actions.append(model.trivial_action)
    header = ["run", "arrivals", "mean_wait", "final_time"] + [f"count_{a.name}" for a in actions]
    summary = [_trajectory_summary(r, traj, actions) for r, traj in enumerate(trajectories)]
    runs = [{"run": r, "records": traj.to_rows()} for r, traj in enumerate(trajectories)]

    if config.out is not None:
        write_jsonl(Path(config.out) / "trajectories.jsonl", ({"run": run["run"], **row} for run in runs for row in run["records"]))
        write_csv(Path(config.out) / "summary.csv", header, summary)
    logger.info("simulated %d runs with %s", config.streams, config.sampler)
    return {"seed": config.seed, "sampler": config.sampler, "runs": runs, "summary": [dict(zip(header, row)) for row in summary]}


# --- point-process ---------------------------------------------------------------


def _count_rows(counts: Sequence[int], expected: Optional[Sequence[float]]) -> list:
    observed = np.bincount(counts, minlength=len(expected) if expected is not None else 0)
    return [["count", n, int(k), None if expected is None else expected[n]] for n, k in enumerate(observed)]


def run_point_process(config: RunConfig, rate: Optional[RateFunction] = None) -> dict:
    """Sample arrival paths of one rate and summarise them against the Poisson (or renewal) law."""
    rate = _load(config, config.model, "rate", parse_rate, rate)
    horizon = config.horizon_time
    sample = sample_renewal_path if config.renewal else sample_path

    def replicate(r: int) -> ArrivalPath:
        return sample(rate, config.beta, horizon, make_stream(config.seed, r))

    paths = map_streams(replicate, config.streams, config.workers)
    counts = [len(p) for p in paths]
    th = config.thresholds
    checks = []
    expected = None
    if not config.renewal:
        pmf = arrival_count_pmf(rate, config.beta, 0.0, horizon, max(max(counts), 1))
        expected = [config.streams * p for p in pmf.probs]
        observed, probs = stat_tests.pool_sparse_bins(
            list(np.bincount(counts, minlength=len(pmf.probs))) + [0], list(pmf.probs) + [pmf.tail_mass], config.streams
        )
        checks.append(stat_tests.chi2_goodness("arrival_counts", observed, probs, th.chi2_p_floor))
    uniforms = [u for p in paths for u in gap_uniforms(rate, config.beta, p, config.renewal)]
    if uniforms:
        checks.append(stat_tests.ks_one_sample("rescaled_gaps", uniforms, lambda u: np.clip(u, 0.0, 1.0), th.ks_critical_scale))

    rows = _count_rows(counts, expected) + [[c.name, None, c.statistic, c.threshold] for c in checks]
    if config.out is not None:
        write_jsonl(Path(config.out) / "paths.jsonl", ({"run": r, **p.to_dict()} for r, p in enumerate(paths)))
        write_csv(Path(config.out) / "statistics.csv", ["statistic", "key", "value", "reference"], rows)
    logger.info("sampled %d %s paths on [0, %s]", len(paths), "renewal" if config.renewal else "Poisson", horizon)
    return {
        "seed": config.seed,
        "paths": [p.to_dict() for p in paths],
        "mean_count": float(np.mean(counts)),
        "checks": [c.to_dict() for c in checks],
    }


# --- validate-equivalence ----------------------------------------------------------


def _swap(model: AdpModel, step):
    if step is NoArrival:
        return step
    actions = model.non_trivial_actions
    return Step(step.wait, actions[len(actions) - 1 - step.action.index], step.state)


def _step_samples(model: AdpModel, step_fn, config: RunConfig, key: int, total: int) -> tuple[np.ndarray, list]:
    x0 = model.initial_state
    sizes = block_sizes(total, BLOCK_SIZE)

    def block(b: int):
        rng = make_stream(config.seed, key, b)
        steps = [step_fn(model, x0, config.beta, math.inf, rng) for _ in range(sizes[b])]
        return [s for s in steps if s is not NoArrival]

    steps = [s for chunk in map_streams(block, len(sizes), config.workers) for s in chunk]
    return np.array([s.wait for s in steps]), [s.action.name for s in steps]


def _total_rate_bound(model: AdpModel, beta: float, horizon: float) -> float:
    states = model.state_space.states() if isinstance(model.state_space, Tabular) else [model.initial_state]
    return max(sum(majorant(model.action_rate(x, a), 0.0, horizon, beta) for a in model.non_trivial_actions) for x in states)


def _conditioned_on(traj: Trajectory, state) -> tuple[list, list]:
    """(wait, action) pairs of the arrivals that leave `state`."""
    waits, names = [], []
    previous = traj.initial_state
    for r in traj.records:
        if previous == state:
            waits.append(r.w)
            names.append(r.action.name)
        previous = r.state
    return waits, names


def run_validate_equivalence(config: RunConfig, model: Optional[AdpModel] = None) -> stat_tests.ValidationReport:
    model = _load(config, config.model, "model", parse_model, model)
    if not isinstance(model.state_space, Tabular):
        raise InvalidParameter("equivalence validation needs a tabular model")
    for x in model.state_space.states():
        for a in model.non_trivial_actions:
            if not isinstance(model.action_rate(x, a), (Constant, PiecewiseConstant)):
                raise InvalidParameter("equivalence validation needs constant or piecewise rates")

    th = config.thresholds
    n = th.n_samples
    report = stat_tests.ValidationReport(seeds={"seed": config.seed}, sample_sizes={"steps_per_sampler": n})
    names = [a.name for a in model.non_trivial_actions]

    aaa_step = sample_aaa_step
    if "swap_actions" in config.faults:
        def aaa_step(m, x, beta, horizon, rng):
            return _swap(m, sample_aaa_step(m, x, beta, horizon, rng))

    iaa_waits, iaa_actions = _step_samples(model, sample_iaa_step, config, IAA_KEY, n)
    aaa_waits, aaa_actions = _step_samples(model, aaa_step, config, AAA_KEY, n)
    report.add(stat_tests.ks_two_sample("aaa_vs_iaa_waits", aaa_waits, iaa_waits, th.ks_critical_scale))
    report.add(
        stat_tests.chi2_homogeneity(
            "aaa_vs_iaa_actions",
            stat_tests.category_counts(aaa_actions, names),
            stat_tests.category_counts(iaa_actions, names),
            th.chi2_p_floor,
        )
    )

    # Uniformization over one long run; arrivals leaving the initial state are i.i.d.
    bound = _total_rate_bound(model, config.beta, math.inf)
    if not bound > 0:
        raise InvalidParameter("no action is accessible from any state")
    x0 = model.initial_state
    horizon = MaxTime(n / bound)
    reference = simulate(model, "iaa", config.beta, horizon, None, make_stream(config.seed, IAA_KEY, 10**6))
    ref_waits, ref_actions = _conditioned_on(reference, x0)
    lambda_bars = [config.lambda_bar] if config.lambda_bar else [2.0 * bound, 4.0 * bound]
    if "low_lambda_bar" in config.faults:
        lambda_bars = [0.5 * bound]
    all_constant = all(isinstance(model.action_rate(x0, a), Constant) for a in model.non_trivial_actions)

    for i, lambda_bar in enumerate(lambda_bars):
        label = f"uniformized_{lambda_bar:g}"
        try:
            check_uniformization_bound(model, lambda_bar, config.beta, horizon.time)
        except BoundViolation:
            report.add(stat_tests.CheckResult(f"{label}_bound", bound, lambda_bar, False))
            continue
        report.add(stat_tests.CheckResult(f"{label}_bound", bound, lambda_bar, True))
        rng = make_stream(config.seed, UNIFORMIZED_KEY, i)
        padded = simulate(model, Uniformized(lambda_bar), config.beta, horizon, None, rng)
        waits, actions = _conditioned_on(strip_trivial(padded), x0)
        report.add(stat_tests.ks_two_sample(f"{label}_vs_iaa_waits", waits, ref_waits, th.ks_critical_scale))
        report.add(
            stat_tests.chi2_homogeneity(
                f"{label}_vs_iaa_actions",
                stat_tests.category_counts(actions, names),
                stat_tests.category_counts(ref_actions, names),
                th.chi2_p_floor,
            )
        )
        if all_constant:
            rate = sum(model.action_rate(x0, a).level ** config.beta for a in model.non_trivial_actions)
            trivial_here = [r.action.is_trivial for r, prev in zip(padded.records, padded.states) if prev == x0]
            report.add(
                stat_tests.proportion_check(f"{label}_id_probability", sum(trivial_here), len(trivial_here), 1.0 - rate / lambda_bar)
            )
        report.sample_sizes[label] = len(waits)
    report.sample_sizes["iaa_reference"] = len(ref_waits)

    if config.out is not None:
        write_json(Path(config.out) / "report.json", report.to_dict())
    logger.info("validation %s (%d checks)", "passed" if report.passed else "FAILED", len(report.checks))
    return report


# --- rl-train / rl-eval --------------------------------------------------------------


def _comparison(mdp: TabularMdp, policy: AnyPolicy, horizon: int) -> dict:
    solution = soft_value_iteration(mdp, horizon)
    best = maxent_objective(mdp, solution.optimal_policy, horizon)
    return {
        "policy_gap": policy_gap(policy, solution),
        "objective_gap": best - maxent_objective(mdp, policy, horizon),
        "optimal_objective": best,
        "optimal_policy": solution.optimal_policy.probabilities.tolist(),
    }


def run_rl(config: RunConfig, mdp: Optional[TabularMdp] = None) -> dict:
    mdp = _load(config, config.model, "MDP", parse_mdp, mdp)
    cfg = config.kl_config()
    optimizer = OptimizerConfig(
        learning_rate=config.lr,
        steps=config.steps,
        mode=config.mode,
        batch_size=config.batch_size,
        time_varying=config.time_varying,
    )
    log: list[TrainingStep] = []
    out = Path(config.out) if config.out is not None else None
    try:
        policy = train_policy(mdp, cfg, optimizer, make_stream(config.seed, 0), on_step=log.append)
    except DivergenceDetected as exc:
        logger.warning("training diverged at step %d; writing last good policy", exc.step)
        if out is not None and exc.last_good is not None:
            write_json(out / "policy_last_good.json", exc.last_good.to_dict())
        raise
    comparison = _comparison(mdp, policy, cfg.horizon)
    sweep = [asdict(row) for row in rho_sweep(mdp, cfg.horizon, config.rhos)]
    log_rows = [[s.step, s.kl, s.maxent_objective, s.grad_norm] for s in log]

    if out is not None:
        write_csv(out / "training_log.csv", ["step", "kl", "maxent_objective", "grad_norm"], log_rows)
        write_json(out / "policy.json", policy.to_dict())
        write_csv(out / "comparison.csv", ["policy_gap", "objective_gap"], [[comparison["policy_gap"], comparison["objective_gap"]]])
        write_csv(out / "rho_sweep.csv", ["rho", "policy_gap", "objective_gap", "kl"], [list(r.values()) for r in sweep])
    return {
        "policy": policy.to_dict(),
        "final_kl": log[-1].kl if log else kl_closed_form(mdp, policy, cfg),
        "comparison": comparison,
        "rho_sweep": sweep,
        "training_log": [asdict(s) for s in log],
    }


def _pooled(estimates: Iterable[tuple[int, float, float]]) -> tuple[float, float]:
    """Merge (count, mean, stderr) blocks into one mean and standard error."""
    estimates = list(estimates)
    total = sum(n for n, _, _ in estimates)
    mean = sum(n * m for n, m, _ in estimates) / total
    squares = sum((n - 1) * (se * se * n) + n * (m - mean) ** 2 for n, m, se in estimates)
    return mean, math.sqrt(squares / (total - 1) / total)


def run_rl_eval(config: RunConfig, mdp: Optional[TabularMdp] = None, policy: Optional[AnyPolicy] = None) -> dict:
    mdp = _load(config, config.model, "MDP", parse_mdp, mdp)
    policy = _load(config, config.policy, "policy", parse_policy, policy)
    cfg = config.kl_config()
    sizes = block_sizes(config.thresholds.n_samples, BLOCK_SIZE)

    def block(b: int):
        estimate = kl_monte_carlo(mdp, policy, cfg, max(sizes[b], 2), make_stream(config.seed, EVAL_KEY, b))
        return max(sizes[b], 2), estimate.estimate, estimate.stderr

    estimate, stderr = _pooled(map_streams(block, len(sizes), config.workers))
    result = {
        "rho": cfg.rho,
        "horizon": cfg.horizon,
        "kl_closed_form": kl_closed_form(mdp, policy, cfg),
        "kl_monte_carlo": {"estimate": estimate, "stderr": stderr, "n_samples": sum(max(s, 2) for s in sizes)},
        "maxent_objective": maxent_objective(mdp, policy, cfg.horizon),
        "comparison": _comparison(mdp, policy, cfg.horizon),
        "seed": config.seed,
    }
    if config.out is not None:
        write_json(Path(config.out) / "evaluation.json", result)
    return result


# --- spiking-demo ------------------------------------------------------------------------


def run_spiking_demo(config: RunConfig, network: Optional[SpikingNetwork] = None) -> dict:
    network = _load(config, config.model, "network", parse_network, network)
    horizon = config.horizon_time

    def replicate(r: int) -> Trajectory:
        return simulate_spiking(network, horizon, config.beta, make_stream(config.seed, r), _sampler(config))

    trajectories = map_streams(replicate, config.streams, config.workers)
    n = network.neuron_count
    counts = np.array([[sum(1 for _, j in spike_raster(traj) if j == i) for i in range(n)] for traj in trajectories])
    runs = len(trajectories)
    count_se = counts.std(axis=0, ddof=1) / math.sqrt(runs) if runs > 1 else np.zeros(n)
    isi_histograms = []
    for i in range(n):
        intervals = [g for traj in trajectories for g in inter_spike_intervals(traj, i)]
        hist, edges = np.histogram(intervals, bins=20) if intervals else (np.zeros(0, dtype=int), np.zeros(0))
        isi_histograms.append({"neuron": i, "counts": hist.tolist(), "edges": edges.tolist(), "intervals": len(intervals)})

    statistics = {
        "runs": runs,
        "horizon": horizon,
        "seed": config.seed,
        "mean_spike_counts": counts.mean(axis=0).tolist(),
        "spike_count_stderr": count_se.tolist(),
        "rates": (counts.mean(axis=0) / horizon).tolist(),
        "isi_histograms": isi_histograms,
    }
    if n == 1:
        longest = max(trajectories, key=len)
        check = stat_tests.permutation_iid_check(
            "isi_iid_permutation",
            inter_spike_intervals(longest, 0),
            make_stream(config.seed, PERMUTATION_KEY),
            floor=config.thresholds.chi2_p_floor,
        )
        statistics["isi_iid"] = check.to_dict()

    raster = [[r, t, j] for r, traj in enumerate(trajectories) for t, j in spike_raster(traj)]
    if config.out is not None:
        write_jsonl(
            Path(config.out) / "trajectories.jsonl",
            ({"run": r, **row} for r, traj in enumerate(trajectories) for row in traj.to_rows(encode_potentials)),
        )
        write_csv(Path(config.out) / "raster.csv", ["run", "t", "neuron"], raster)
        write_json(Path(config.out) / "spiking_stats.json", statistics)
    return {"raster": raster, "statistics": statistics}
