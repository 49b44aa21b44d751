import os
from pathlib import Path
from shutil import get_terminal_size

import click

from .configuration import Config
from .console import dumps_json
from .dataset import METHODS, DatasetManager, evaluate_files
from .errors import LossError
from .losses import run_gradcheck


class Workbench:
    """Middleman to make the resolved config available to commands."""

    config: Config
    config_path: Path

    def __init__(self, config_path: Path) -> None:
        self.config_path = config_path

    def setup(self, config: Config):
        self.config = config

    def manager(self, out: Path | None) -> DatasetManager:
        out_dir = out or Path(self.config.tree_str("paths", "out"))
        return DatasetManager(self.config, out_dir)


pass_workbench = click.make_pass_decorator(Workbench)


class WorkbenchGroup(click.Group):
    """Help output that uses the terminal width and lists the pipeline steps first."""

    sections = {
        "Pipeline": ("simulate", "baseline", "train-toy", "evaluate"),
        "Tools": ("gradcheck", "config"),
    }

    def format_help(self, ctx, formatter):
        formatter.width = get_terminal_size().columns
        super().format_help(ctx, formatter)

    def format_commands(
        self,
        ctx: click.Context,
        formatter: click.HelpFormatter,
    ) -> None:
        limit = get_terminal_size().columns
        for heading, names in self.sections.items():
            rows = [
                (name, self.commands[name].get_short_help_str(limit))
                for name in names
                if name in self.commands and not self.commands[name].hidden
            ]
            if rows:
                with formatter.section(heading):
                    formatter.write_dl(rows)


out_option = click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    envvar="BINAURALKIT_OUT",
    default=None,
    help="Output folder, defaults to paths.out from the config",
)


@click.group(
    invoke_without_command=True,
    cls=WorkbenchGroup,
    help="Simulate binaural speech scenes, run reference systems, train toy "
    "filters and score the results.",
)
@click.option("--debug/--no-debug", default=False)
@click.option(
    "-C",
    "--config",
    type=click.Path(dir_okay=False, path_type=Path),
    envvar="BINAURALKIT_CONFIG",
    default=None,
)
@click.pass_context
def cli(ctx: click.Context, debug: bool, config: Path | None):
    """Group all of our commands together"""
    explicit = config is not None
    if explicit:
        config_path = config
    else:
        config_path = Path(click.get_app_dir("binauralkit")) / "binauralkit.toml"

    ctx.obj = Workbench(config_path)

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit()

    if ctx.invoked_subcommand == "config":
        return

    if config_path.exists() and (explicit or "PYTEST_CURRENT_TEST" not in os.environ):
        ctx.obj.setup(Config.load(config_path, debug))
    elif explicit:
        raise click.UsageError(f"Config file {config_path} does not exist")
    else:
        ctx.obj.setup(Config({}, debug))


@cli.command()
@click.option("--count", default=10, type=click.IntRange(0), help="Number of scenes")
@click.option("--seed", default=0, type=int, help="Seed for the whole dataset")
@click.option(
    "--speech",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Folder of speech WAV files",
)
@click.option(
    "--noise",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Folder of noise WAV files",
)
@click.option("--jobs", default=1, type=click.IntRange(1), help="Parallel scenes")
@out_option
@pass_workbench
def simulate(
    workbench: Workbench,
    count: int,
    seed: int,
    speech: Path,
    noise: Path,
    jobs: int,
    out: Path | None,
):
    """Generate reverberant noisy scenes with binaural targets"""
    manager = workbench.manager(out)
    scenes = manager.simulate(count, seed, speech, noise, jobs)
    folder = click.format_filename(manager.out_dir)
    click.echo(f"Simulated {len(scenes)} scenes in {folder}")


@cli.command()
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.option(
    "-m",
    "--method",
    default=METHODS[0],
    type=click.Choice(METHODS, case_sensitive=False),
    help="Reference system to run",
)
@out_option
@pass_workbench
def baseline(workbench: Workbench, source: Path, method: str, out: Path | None):
    """Run a reference system on a scene folder or a whole dataset"""
    manager = workbench.manager(out)
    reports = manager.baseline(source, method.lower())
    for report in reports:
        click.echo(
            f"{report.scene_id}: dITD {report.delta_itd:.4f} ms, "
            f"dILD {report.delta_ild:.3f} dB, SD {report.sd:.3f} dB",
        )


@cli.command()
@click.argument("estimates", type=click.Path(exists=True, path_type=Path))
@click.argument("references", type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True, default=False, help="Print JSON")
@out_option
@pass_workbench
def evaluate(
    workbench: Workbench,
    estimates: Path,
    references: Path,
    as_json: bool,
    out: Path | None,
):
    """Score estimates against binaural targets, per scene and per SNR bucket"""
    if estimates.is_file() and references.is_file():
        report = evaluate_files(workbench.config, estimates, references)
        click.echo(dumps_json(report.to_json()), nl=False)
        return

    manager = workbench.manager(out)
    summary = manager.evaluate(estimates, references)
    if as_json:
        click.echo(dumps_json(summary), nl=False)
        return

    rows = [("all", summary["overall"])] + list(summary["by_snr"].items())
    for bucket, means in rows:
        click.echo(
            f"{bucket:>4} ({means['count']} scenes): dITD {means['delta_itd']:.4f} ms, "
            f"dILD {means['delta_ild']:.3f} dB, SD {means['sd']:.3f} dB",
        )


@cli.command(name="train-toy")
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.option(
    "--epochs",
    default=None,
    type=click.IntRange(0),
    help="Override train.max_epochs",
)
@out_option
@pass_workbench
def train_toy(workbench: Workbench, source: Path, epochs: int | None, out: Path | None):
    """Fit per-frequency binaural filters to one or more scenes"""
    manager = workbench.manager(out)
    result = manager.train_toy(source, epochs)
    initial = result.losses[0] if result.losses else result.final_loss
    click.echo(
        f"{len(result.losses)} epochs, loss {initial:.6g} -> {result.final_loss:.6g} "
        f"after {result.state.halvings} halvings",
    )


@cli.command()
@click.option("--seed", default=0, type=int, help="Seed of the random spectra")
@click.option("--tolerance", default=1e-5, type=float, help="Largest accepted error")
@click.option("--json", "as_json", is_flag=True, default=False, help="Print JSON")
@pass_workbench
def gradcheck(workbench: Workbench, seed: int, tolerance: float, as_json: bool):
    """Compare analytic loss gradients with finite differences"""
    errors = run_gradcheck(
        seed,
        eps=workbench.config.tree_float("losses", "ild_eps"),
        weights=workbench.config.loss_weights(),
    )
    if as_json:
        click.echo(dumps_json(errors), nl=False)
    else:
        for name in ("ri", "mag", "mwild"):
            click.echo(f"{name}: {errors[name]:.3e}")

    failed = sorted(name for name, error in errors.items() if not error < tolerance)
    if failed:
        raise LossError(
            f"Gradient error above {tolerance:g} for {', '.join(failed)}",
        )


@cli.command(name="config")
@click.option(
    "--edit",
    is_flag=True,
    default=False,
    help="Open the editor for this config file",
)
@click.option("--delete", is_flag=True, default=False, help="Delete the config file")
@click.option("--path", is_flag=True, default=False, help="Path of the config file")
@click.option(
    "--default",
    is_flag=True,
    default=False,
    help="Show the default config",
)
@click.option(
    "--raw",
    is_flag=True,
    default=False,
    help="Show the contents of the config file",
)
@pass_workbench
def config(
    workbench: Workbench,
    edit: bool,
    delete: bool,
    path: bool,
    default: bool,
    raw: bool,
):
    """Show the configuration file, or generate it if it does not exist"""

    config_file = workbench.config_path
    config_file_str = click.format_filename(config_file)

    if default:
        click.echo(Config.dumps())
        return

    if path:
        click.echo(config_file_str)
        return

    if not config_file.exists():
        click.echo(f'Config file "{config_file_str}" does not exist.')
        if click.confirm("Do you want to create it with default values?"):
            Config.write(config_file)
            click.echo(f'Created config file "{config_file_str}"')
        else:
            click.echo("No config file was created.")
        return

    if edit:
        click.edit(filename=str(config_file), extension=".toml")
        return

    if delete:
        config_file.unlink()
        click.echo("Deleted the config file")
        return

    if raw:
        click.echo(config_file.read_text())
    else:
        click.echo(Config.load(config_file, False).flatten())
