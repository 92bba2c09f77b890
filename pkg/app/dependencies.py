from pydantic import ValidationError

from app.config import CHI2_P_FLOOR, DEFAULT_WORKERS, KS_CRITICAL_SCALE, N_SAMPLES
from app.errors import ParseError
from app.services.harness import RunConfig, Thresholds
from app.utils.validation import enforce_range

MAX_RUNS = 10_000
MAX_SAMPLES = 1_000_000
MAX_STEPS = 100_000

# Request fields copied straight into a RunConfig
RUN_FIELDS = (
    "sampler",
    "lambda_bar",
    "beta",
    "horizon_arrivals",
    "horizon_time",
    "seed",
    "rho",
    "steps",
    "lr",
    "mode",
    "batch_size",
    "time_varying",
    "renewal",
    "rhos",
    "faults",
)


def get_thresholds() -> Thresholds:
    return Thresholds(ks_critical_scale=KS_CRITICAL_SCALE, chi2_p_floor=CHI2_P_FLOOR, n_samples=N_SAMPLES)


def get_workers() -> int:
    return DEFAULT_WORKERS


def build_run_config(command: str, data: dict, thresholds: Thresholds, workers: int) -> RunConfig:
    """RunConfig for an HTTP request; nothing is written to disk."""
    runs = data.get("runs", 1)
    enforce_range(runs, 1, MAX_RUNS, "runs")
    n_samples = data.get("n_samples", thresholds.n_samples)
    enforce_range(n_samples, 2, MAX_SAMPLES, "n_samples")
    enforce_range(data.get("steps", 1), 1, MAX_STEPS, "steps")
    fields = {k: data[k] for k in RUN_FIELDS if data.get(k) is not None}
    try:
        return RunConfig(
            command=command,
            streams=runs,
            workers=workers,
            thresholds=thresholds.model_copy(update={"n_samples": n_samples}),
            **fields,
        )
    except ValidationError as exc:
        raise ParseError(str(exc)) from exc
