from pathlib import Path

import click
from pydantic import ValidationError

from app.config import DEFAULT_RHO, DEFAULT_SEED, DEFAULT_WORKERS, OUTPUT_DIR
from app.errors import AdpError
from app.services import harness
from app.utils.logs import configure_logging


def _run(ctx: click.Context, fn, **fields):
    """Build a RunConfig from the command's options and call `fn`; AdpError exits 2."""
    fields = {k: v for k, v in fields.items() if v is not None}
    thresholds = {k: fields.pop(k) for k in ("ks_critical_scale", "chi2_p_floor", "n_samples") if k in fields}
    try:
        config = harness.RunConfig(command=ctx.command.name, thresholds=thresholds, **fields)
        return fn(config)
    except ValidationError as exc:
        raise click.UsageError(str(exc), ctx=ctx) from exc
    except AdpError as exc:
        click.echo(f"Error: {type(exc).__name__}: {exc}", err=True)
        ctx.exit(2)


seed_option = click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
out_option = click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=OUTPUT_DIR, show_default=True)
workers_option = click.option("--workers", type=int, default=DEFAULT_WORKERS, show_default=True)
model_option = click.option("--model", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)


def sampler_options(fn):
    for option in reversed(
        [
            click.option("--sampler", type=click.Choice(["iaa", "aaa", "unif"]), default="iaa", show_default=True),
            click.option("--lambda-bar", type=float, default=None),
            click.option("--beta", type=float, default=1.0, show_default=True),
        ]
    ):
        fn = option(fn)
    return fn


@click.group()
@click.option("--log-level", default=None, help="Overrides ADP_LOG_LEVEL.")
def cli(log_level):
    """Action-driven process simulation, validation and max-ent RL."""
    configure_logging(log_level)


@cli.command("simulate")
@model_option
@sampler_options
@click.option("--horizon-arrivals", type=int, default=None)
@click.option("--horizon-time", type=float, default=None)
@click.option("--streams", type=int, default=1, show_default=True, help="Number of replications.")
@seed_option
@workers_option
@out_option
@click.pass_context
def simulate_command(ctx, **options):
    result = _run(ctx, harness.run_simulate, **options)
    click.echo(f"{len(result['runs'])} trajectories written to {options['out']}")


@cli.command("point-process")
@model_option
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--horizon-time", type=float, required=True)
@click.option("--renewal", is_flag=True, default=False, help="Restart the rate clock at every arrival.")
@click.option("--streams", type=int, default=1, show_default=True, help="Number of paths.")
@seed_option
@workers_option
@out_option
@click.pass_context
def point_process_command(ctx, **options):
    result = _run(ctx, harness.run_point_process, **options)
    click.echo(f"{len(result['paths'])} paths written to {options['out']}; mean count {result['mean_count']:.6g}")


@cli.command("validate-equivalence")
@model_option
@click.option("--beta", type=float, default=1.0, show_default=True)
@click.option("--lambda-bar", type=float, default=None)
@click.option("--n-samples", type=int, default=None)
@click.option("--ks-critical-scale", type=float, default=None)
@click.option("--chi2-p-floor", type=float, default=None)
@click.option("--fault", "faults", multiple=True, type=click.Choice(harness.FAULTS))
@seed_option
@workers_option
@out_option
@click.pass_context
def validate_command(ctx, faults, **options):
    report = _run(ctx, harness.run_validate_equivalence, faults=list(faults), **options)
    for check in report.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'}  {check.name}  {check.statistic:.6g} (threshold {check.threshold:.6g})")
    if not report.passed:
        ctx.exit(1)


def rl_options(fn):
    for option in reversed(
        [
            model_option,
            click.option("--rho", type=float, default=DEFAULT_RHO, show_default=True),
            click.option("--horizon-arrivals", type=int, default=1, show_default=True, help="Trajectory length N."),
        ]
    ):
        fn = option(fn)
    return fn


@cli.command("rl-train")
@rl_options
@click.option("--steps", type=int, default=2000, show_default=True)
@click.option("--lr", type=float, default=0.5, show_default=True)
@click.option("--mode", type=click.Choice(["exact_gradient", "reinforce"]), default="exact_gradient", show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@click.option("--time-varying", is_flag=True, default=False)
@seed_option
@out_option
@click.pass_context
def rl_train_command(ctx, **options):
    result = _run(ctx, harness.run_rl, **options)
    comparison = result["comparison"]
    click.echo(f"final KL {result['final_kl']:.6g}; policy gap {comparison['policy_gap']:.3e}; objective gap {comparison['objective_gap']:.3e}")


@cli.command("rl-eval")
@rl_options
@click.option("--policy", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--n-samples", type=int, default=None)
@seed_option
@workers_option
@out_option
@click.pass_context
def rl_eval_command(ctx, **options):
    result = _run(ctx, harness.run_rl_eval, **options)
    mc = result["kl_monte_carlo"]
    click.echo(f"KL closed form {result['kl_closed_form']:.6g}; Monte Carlo {mc['estimate']:.6g} ± {mc['stderr']:.2g}")


@cli.command("spiking-demo")
@model_option
@sampler_options
@click.option("--horizon-time", type=float, required=True)
@click.option("--streams", type=int, default=1, show_default=True, help="Number of replications.")
@seed_option
@workers_option
@out_option
@click.pass_context
def spiking_command(ctx, **options):
    result = _run(ctx, harness.run_spiking_demo, **options)
    click.echo(f"{len(result['raster'])} spikes over {result['statistics']['runs']} runs")


def main() -> None:
    cli(prog_name="python -m app")
