"""Implements CLI interface for d4decoder."""

from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any
import click
import dask
import pandas as pd
from dask.diagnostics import ProgressBar
from d4decoder import __version__
from d4decoder import validation
from d4decoder.inference import decode
from d4decoder.learning.algorithms import TrainingLog
from d4decoder.learning.algorithms import train
from d4decoder.metrics import SOURCES
from d4decoder.metrics import cross_validate
from d4decoder.metrics import decode_table
from d4decoder.metrics import evaluate
from d4decoder.metrics import write_report
from d4decoder.models.checkpoint import Checkpoint
from d4decoder.models.checkpoint import config_hash
from d4decoder.models.checkpoint import load_checkpoint
from d4decoder.models.checkpoint import save_checkpoint
from d4decoder.recipe import RunConfig
from d4decoder.recipe import merge_settings
from d4decoder.recipe import resolve_output_dir
from d4decoder.recipe import stream_seeds
from d4decoder.simulation import GENERATORS
from d4decoder.simulation.dataset_protocol import FLOAT_FORMAT
from d4decoder.simulation.dataset_protocol import FNAME_PROPERTIES
from d4decoder.simulation.dataset_protocol import EpisodeDataset
from d4decoder.simulation.dataset_protocol import copy_properties_file
from d4decoder.simulation.dataset_protocol import read_dataset
from d4decoder.simulation.dataset_protocol import write_dataset
from d4decoder.simulation.sim20 import SimSpec


FNAME_CHECKPOINT = "checkpoint.json"
FNAME_LOG = "training_log.ndjson"
FNAME_Q_VS_LAG = "q_vs_lag.csv"
FNAME_Q_TRACE = "q_trace.csv"
FNAME_SWEEP = "sweep.csv"
FNAME_DECODE = "decode.csv"
FNAME_DENSITIES = "densities.nc"
COMPARE_NOTE = "GRU-RNN baseline not included."

DOMAIN_ERRORS = (
    validation.TruncationError,
    validation.GridMismatchError,
    validation.DegenerateInputError,
    validation.DegenerateDensityError,
    validation.DimensionMismatchError,
    validation.MissingSamplesError,
    validation.SpecInvalidError,
    validation.LengthMismatchError,
    validation.InsufficientDataError,
    validation.IncompatibleCheckpointError,
)

output_option = click.option(
    "--output",
    type=click.Path(path_type=Path),
    help="Existing output directory (default: the configured working directory).",
)
config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Flat YAML or JSON file of settings; flags override it.",
)
dataset_option = click.option(
    "--dataset",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Dataset folder written by `simulate`.",
)
seed_option = click.option("--seed", type=int, help="Root seed of the run.")


@contextmanager
def _errors_as_click() -> Iterator[None]:
    """Report domain, configuration and I/O errors as CLI errors."""
    try:
        yield
    except (*DOMAIN_ERRORS, ValueError, OSError) as err:
        raise click.ClickException(f"{type(err).__name__}: {err}") from err


def _state_variable(dataset: EpisodeDataset) -> str:
    if dataset.properties.get("generator") == "placecells":
        return "position"
    return "state"


def _run_config(
    command: str,
    config_path: Path | None,
    output: Path | None,
    inputs: list[Path],
    **flags: Any,
) -> RunConfig:
    settings = merge_settings(config_path, flags)
    return RunConfig(command, settings, resolve_output_dir(output, command), inputs)


@click.group()
@click.version_option(version=__version__)
def cli() -> None:
    """Deep direct discriminative decoders: simulate, train, decode, evaluate."""


@cli.command()
@click.option("--kind", type=click.Choice(list(GENERATORS)), help="Generator name.")
@click.option("--n-steps", type=int, help="Episode length (sim20 only).")
@seed_option
@config_option
@output_option
def simulate(
    kind: str | None,
    n_steps: int | None,
    seed: int | None,
    config_path: Path | None,
    output: Path | None,
) -> None:
    """Generate a synthetic dataset."""
    with _errors_as_click():
        run = _run_config(
            "simulate", config_path, output, [], kind=kind, n_steps=n_steps, seed=seed
        )
        kind = str(run.get("kind", "sim20"))
        if kind not in GENERATORS:
            raise ValueError(f"Unknown generator '{kind}'.")
        if kind == "sim20":
            generator: Any = GENERATORS[kind](SimSpec(n_steps=run.get("n_steps", 1000)))
        else:
            generator = GENERATORS[kind]()
        dataset = generator.generate(run.seed)
        write_dataset(dataset, run.output_dir)
        tags = [f"{kind}-{stream}" for stream in _streams(kind)]
        run.write_manifest(stream_seeds(run.seed, tags))
    click.echo(
        f"Generated '{dataset.name}': {dataset.n_steps} steps, "
        f"{dataset.n_channels} channels, {dataset.state_dim}-D states.\n"
        f"    {run.output_dir}"
    )


def _streams(kind: str) -> list[str]:
    if kind == "sim20":
        return ["channels", "states", "noise"]
    return ["fields", "trajectory", "spikes"]


@cli.command(name="train")
@dataset_option
@click.option("--model", type=click.Choice(["d4", "ddd", "ssm"]))
@click.option("--algo", type=click.Choice(["greedy", "regularized"]))
@click.option("--lambda", "lam", type=float, help="Regularization coefficient.")
@click.option("--max-lag", type=int, help="Largest (or fixed) history lag.")
@click.option("--state-mode", type=click.Choice(["auto", "observed", "latent"]))
@click.option(
    "--init",
    "init_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Checkpoint to warm-start from.",
)
@click.option("--grid-lower", type=float, multiple=True)
@click.option("--grid-upper", type=float, multiple=True)
@click.option("--grid-cells", type=int, multiple=True)
@seed_option
@config_option
@output_option
def train_command(
    dataset: Path,
    model: str | None,
    algo: str | None,
    lam: float | None,
    max_lag: int | None,
    state_mode: str | None,
    init_path: Path | None,
    grid_lower: tuple[float, ...],
    grid_upper: tuple[float, ...],
    grid_cells: tuple[int, ...],
    seed: int | None,
    config_path: Path | None,
    output: Path | None,
) -> None:
    """Train a decoder and write its checkpoint, log and Q curves."""
    with _errors_as_click():
        inputs = [dataset] + ([init_path] if init_path else [])
        run = _run_config(
            "train",
            config_path,
            output,
            inputs,
            model=model,
            algo=algo,
            lam=lam,
            max_lag=max_lag,
            state_mode=state_mode,
            grid_lower=grid_lower,
            grid_upper=grid_upper,
            grid_cells=grid_cells,
            seed=seed,
        )
        episode = read_dataset(dataset)
        if run.get("state_mode") == "latent":
            episode = episode.without_states()
        config = run.train_config()
        init = load_checkpoint(init_path) if init_path else None
        log = TrainingLog(run.output_dir / FNAME_LOG)
        result = train(episode, config, run.grid(episode), log, init)

        save_checkpoint(
            run.output_dir / FNAME_CHECKPOINT,
            result.checkpoint(config_hash(run.settings)),
        )
        if config.model != "ssm":
            if config.algorithm == "greedy":
                name, frame = FNAME_Q_VS_LAG, result.curve_frame()
            else:
                name, frame = FNAME_Q_TRACE, result.trace_frame()
            frame.to_csv(run.output_dir / name, index=False, float_format=FLOAT_FORMAT)
        if (dataset / FNAME_PROPERTIES).exists():
            copy_properties_file(dataset, run.output_dir)
        run.write_manifest(stream_seeds(config.seed, ["init"]))
    click.echo(
        f"Trained {config.model} (lag {result.lag}); outputs in:\n    {run.output_dir}"
    )


@cli.command(name="decode")
@dataset_option
@click.option(
    "--checkpoint",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--source", type=click.Choice(list(SOURCES)))
@click.option("--samples", type=int, help="Trajectories to draw from the posterior.")
@click.option("--dump-densities", is_flag=True, default=None)
@seed_option
@config_option
@output_option
def decode_command(
    dataset: Path,
    checkpoint: Path,
    source: str | None,
    samples: int | None,
    dump_densities: bool | None,
    seed: int | None,
    config_path: Path | None,
    output: Path | None,
) -> None:
    """Decode a dataset with a trained checkpoint."""
    with _errors_as_click():
        run = _run_config(
            "decode",
            config_path,
            output,
            [dataset, checkpoint],
            source=source,
            samples=samples,
            dump_densities=dump_densities,
            seed=seed,
        )
        episode = read_dataset(dataset)
        trained = load_checkpoint(checkpoint)
        post = decode(
            episode.observations,
            trained.model,
            trained.transition,
            trained.grid,
            n_samples=int(run.get("samples", 0)),
            seed=run.seed,
            denominator=run.get("denominator", trained.denominator),
        )
        table = decode_table(post, episode.states, run.get("source", "smoother"))
        table.to_csv(
            run.output_dir / FNAME_DECODE, index=False, float_format=FLOAT_FORMAT
        )
        if run.get("dump_densities"):
            ds = post.to_dataset(_state_variable(episode))
            comp = dict(zlib=True, complevel=5)
            encoding = {var: comp for var in ds.data_vars}
            ds.to_netcdf(
                path=run.output_dir / FNAME_DENSITIES,
                encoding=encoding,
                engine="h5netcdf",
            )
        run.write_manifest()
    click.echo(f"Decoded {post.n_steps} steps; outputs in:\n    {run.output_dir}")


@cli.command(name="evaluate")
@dataset_option
@click.option(
    "--checkpoint",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Evaluate this checkpoint; without it, cross-validate a new training.",
)
@click.option("--split", help="Split tag of the evaluated dataset.")
@click.option("--folds", type=int, help="Number of contiguous folds.")
@click.option("--holdout", type=float, help="Training fraction, from the start.")
@click.option("--lambdas", type=float, multiple=True, help="Lambda grid per fold.")
@click.option("--model", type=click.Choice(["d4", "ddd", "ssm"]))
@click.option("--algo", type=click.Choice(["greedy", "regularized"]))
@click.option("--lambda", "lam", type=float)
@click.option("--source", type=click.Choice(list(SOURCES)))
@seed_option
@config_option
@output_option
def evaluate_command(
    dataset: Path,
    checkpoint: Path | None,
    split: str | None,
    folds: int | None,
    holdout: float | None,
    lambdas: tuple[float, ...],
    model: str | None,
    algo: str | None,
    lam: float | None,
    source: str | None,
    seed: int | None,
    config_path: Path | None,
    output: Path | None,
) -> None:
    """Score a checkpoint on a dataset, or cross-validate a training setup."""
    with _errors_as_click():
        inputs = [dataset] + ([checkpoint] if checkpoint else [])
        run = _run_config(
            "evaluate",
            config_path,
            output,
            inputs,
            split=split,
            folds=folds,
            holdout=holdout,
            lambdas=lambdas,
            model=model,
            algo=algo,
            lam=lam,
            source=source,
            seed=seed,
        )
        episode = read_dataset(dataset)
        if episode.states is None:
            raise validation.InsufficientDataError(
                f"Evaluation needs the true states of '{episode.name}'."
            )
        source = run.get("source", "smoother")
        if checkpoint is not None:
            trained = load_checkpoint(checkpoint)
            post = decode(
                episode.observations,
                trained.model,
                trained.transition,
                trained.grid,
                denominator=trained.denominator,
            )
            reports = [
                evaluate(
                    episode.states,
                    post,
                    source,
                    run.get("split", "test"),
                    {"model": trained.kind, "lag": trained.lag},
                )
            ]
        else:
            lams = run.get("lambdas")
            reports = cross_validate(
                episode,
                run.train_config(),
                folds=run.get("folds", 2),
                holdout=run.get("holdout"),
                lams=list(lams) if lams else None,
                grid=run.grid(episode),
                source=source,
            )
        write_report(reports, run.output_dir)
        run.write_manifest(stream_seeds(run.seed, ["init"]))
    for report in reports:
        click.echo(
            f"{report.split}: MSE {report.mse.round(4).tolist()}, "
            f"CC {report.cc.round(3).tolist()}, "
            f"HPD coverage {report.hpd_coverage.round(3).tolist()}"
        )


@cli.command()
@dataset_option
@click.option(
    "--checkpoint",
    "checkpoints",
    multiple=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Checkpoint to compare; give at least two.",
)
@click.option("--source", type=click.Choice(list(SOURCES)))
@config_option
@output_option
def compare(
    dataset: Path,
    checkpoints: tuple[Path, ...],
    source: str | None,
    config_path: Path | None,
    output: Path | None,
) -> None:
    """Decode one dataset with several checkpoints and report side by side."""
    if len(checkpoints) < 2:
        raise click.UsageError("Compare needs at least two --checkpoint options.")
    with _errors_as_click():
        run = _run_config(
            "compare", config_path, output, [dataset, *checkpoints], source=source
        )
        episode = read_dataset(dataset)
        if episode.states is None:
            raise validation.InsufficientDataError(
                f"Comparison needs the true states of '{episode.name}'."
            )
        trained = [load_checkpoint(path) for path in checkpoints]
        _check_compatible(trained, episode)
        reports = []
        for path, item in zip(checkpoints, trained, strict=True):
            post = decode(
                episode.observations,
                item.model,
                item.transition,
                item.grid,
                denominator=item.denominator,
            )
            reports.append(
                evaluate(
                    episode.states,
                    post,
                    run.get("source", "smoother"),
                    episode.name,
                    {"checkpoint": path.name, "model": item.kind, "lag": item.lag},
                )
            )
        write_report(reports, run.output_dir, note=COMPARE_NOTE)
        run.write_manifest()
    click.echo(COMPARE_NOTE)
    for report in reports:
        click.echo(
            f"{report.metadata['checkpoint']} ({report.metadata['model']}): "
            f"MSE {report.mse.round(4).tolist()}, CC {report.cc.round(3).tolist()}"
        )


def _check_compatible(trained: list[Checkpoint], episode: EpisodeDataset) -> None:
    for item in trained:
        if item.grid.ndim != episode.state_dim:
            raise validation.IncompatibleCheckpointError(
                f"A checkpoint decodes {item.grid.ndim}-D states, the dataset has "
                f"{episode.state_dim}-D states."
            )
        channels = getattr(item.model, "n_channels", episode.n_channels)
        if channels != episode.n_channels:
            raise validation.IncompatibleCheckpointError(
                f"A checkpoint expects {channels} channels, the dataset has "
                f"{episode.n_channels}."
            )


def _sweep_trial(
    episode: EpisodeDataset, run: RunConfig, param: str, value: float, index: int
) -> dict[str, Any]:
    config = run.train_config(progress=False)
    if param == "lambda":
        config = replace(config, algorithm="regularized", lam=float(value))
    else:
        config = replace(config, algorithm="regularized", max_lag=int(value))
    result = train(episode, config, run.grid(episode))
    row: dict[str, Any] = {"trial": index, param: value}
    if result.q_curve:
        row.update(result.q_curve[-1])
    if episode.states is not None:
        post = decode(
            episode.observations,
            result.model,
            result.transition,
            result.grid,
            denominator=result.config.denominator,
        )
        report = evaluate(episode.states, post, split="train")
        for axis, cc in enumerate(report.cc):
            row[f"cc_{axis}"] = float(cc)
            row[f"mse_{axis}"] = float(report.mse[axis])
    return row


@cli.command()
@dataset_option
@click.option("--param", type=click.Choice(["lambda", "lag"]), help="Swept setting.")
@click.option("--values", type=float, multiple=True, help="Swept values.")
@click.option("--scheduler", type=click.Choice(["threads", "processes", "synchronous"]))
@click.option("--model", type=click.Choice(["d4", "ddd"]))
@seed_option
@config_option
@output_option
def sweep(
    dataset: Path,
    param: str | None,
    values: tuple[float, ...],
    scheduler: str | None,
    model: str | None,
    seed: int | None,
    config_path: Path | None,
    output: Path | None,
) -> None:
    """Train one regularized run per lambda (or lag) value in parallel."""
    with _errors_as_click():
        run = _run_config(
            "sweep",
            config_path,
            output,
            [dataset],
            param=param,
            values=values,
            scheduler=scheduler,
            model=model,
            seed=seed,
        )
        param = str(run.get("param", "lambda"))
        values = tuple(run.get("values", ()))
        if not values:
            raise ValueError("A sweep needs at least one value.")
        episode = read_dataset(dataset)
        trials = [
            dask.delayed(_sweep_trial)(episode, run, param, value, index)
            for index, value in enumerate(values)
        ]
        with ProgressBar():
            rows = dask.compute(*trials, scheduler=run.get("scheduler", "threads"))
        frame = pd.DataFrame(sorted(rows, key=lambda row: row["trial"]))
        frame.to_csv(
            run.output_dir / FNAME_SWEEP, index=False, float_format=FLOAT_FORMAT
        )
        run.write_manifest(stream_seeds(run.seed, ["init"]))
    click.echo(f"Finished {len(values)} trials; outputs in:\n    {run.output_dir}")


if __name__ == "__main__":
    cli()
