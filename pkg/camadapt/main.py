import asyncio
import logging
from pathlib import Path
from typing import Any, Literal

import click
import torch
from dotenv import load_dotenv

from camadapt import __version__
from camadapt.bench import (
    REPORT_FORMATS,
    ExperimentSpec,
    ReportMetadata,
    StudyReport,
    emit_report,
    load_report,
    run_adaptation_study,
    run_shift_study,
)
from camadapt.features import FeatureConfig
from camadapt.gradcheck import run_gradcheck
from camadapt.imaging.preprocess import (
    load_image,
    preprocess_dataset,
    save_image,
    square_and_resize,
    to_image,
    to_tensor,
)
from camadapt.imaging.synth import (
    SynthDatasetConfig,
    build_synth_dataset,
    default_benchmark_config,
)
from camadapt.manifest import load_manifest
from camadapt.metrics import evaluate_matrix
from camadapt.models.checkpoint import load_classifier, parameter_hash
from camadapt.models.classifier import ClassifierConfig
from camadapt.models.generator import SIZE_MULTIPLE, transform
from camadapt.settings import Settings, get_settings, load_config, set_settings
from camadapt.training.adaptation import (
    AdaptationRegistry,
    load_generator,
    train_adaptation,
)
from camadapt.training.classifier import train_classifier
from camadapt.training.config import TrainConfig, classifier_train_config
from camadapt.training.monitor import residue_heatmap
from camadapt.types import (
    ArtifactMismatchError,
    CamadaptError,
    CheckFailedError,
    DegenerateImageError,
    EmptyDatasetError,
    ExitCode,
    Task,
    UnknownBrandError,
)
from camadapt.utils.logging import configure_logging

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
CORRUPTION_FACTOR = 1.5

# Precondition errors caused by command line input rather than by a bug.
INPUT_ERRORS = (UnknownBrandError, EmptyDatasetError, DegenerateImageError)


class CamadaptGroup(click.Group):
    """Command group that turns package errors into their exit codes."""

    def invoke(self, ctx: click.Context) -> Any:  # noqa: ANN401
        """Invoke the command, exiting with the code of a `CamadaptError`.

        Unknown brands, empty image sets and blank images named on the command
        line are configuration errors.
        """
        try:
            return super().invoke(ctx)
        except CamadaptError as e:
            logger.error("%s", e)  # noqa: TRY400
            ctx.exit(int(e.exit_code))
        except INPUT_ERRORS as e:
            logger.error("%s", e.args[0] if e.args else e)  # noqa: TRY400
            ctx.exit(int(ExitCode.CONFIG_ERROR))


def _seeded(config: TrainConfig) -> TrainConfig:
    seed = get_settings().seed
    return config if seed is None else config.model_copy(update={"seed": seed})


def _train_config(path: str | None, defaults: TrainConfig) -> TrainConfig:
    if path is None:
        return _seeded(defaults)
    return load_config(Path(path), TrainConfig)


def _gradcheck_size(_ctx: click.Context, _param: click.Parameter, value: int) -> int:
    if value <= 0 or value % SIZE_MULTIPLE:
        msg = f"{value} is not a positive multiple of {SIZE_MULTIPLE}"
        raise click.BadParameter(msg)
    return value


def _dry_run(message: str) -> bool:
    if get_settings().dry_run:
        click.echo(f"[dry-run] {message}")
        return True
    return False


task_option = click.option(
    "--task",
    type=click.Choice([t.value for t in Task]),
    help="Task of the manifest grades.",
    default=Task.grading5.value,
    show_default=True,
)
binary_option = click.option(
    "--binary",
    is_flag=True,
    help="Relabel 5-class grades for referable DR (grade >= 2).",
)


@click.group(cls=CamadaptGroup)
@click.option(
    "-v",
    "--verbose",
    count=True,
    help="Increase logging verbosity (can be used multiple times).",
    default=1,
)
@click.option(
    "-q", "--quiet", is_flag=True, help="Suppress all but error and critical logging."
)
@click.option(
    "--logging-plain",
    is_flag=True,
    help="Use plain logging format.",
    show_envvar=True,
    envvar="CAMADAPT_LOGGING_PLAIN",
)
@click.option(
    "--env-file",
    type=click.Path(exists=True, dir_okay=False, readable=True),
    help="Path to a .env file to load environment variables from.",
    default=None,
    is_eager=True,
    expose_value=False,
    callback=lambda _ctx, _param, value: load_dotenv(value),
)
@click.option(
    "--seed",
    type=int,
    help="Seed of all randomness; overrides the seed of every loaded config.",
    default=None,
    show_envvar=True,
    envvar="CAMADAPT_SEED",
)
@click.option(
    "--dry-run",
    is_flag=True,
    help="Validate inputs and print the plan without writing anything.",
    show_envvar=True,
    envvar="CAMADAPT_DRY_RUN",
)
@click.option(
    "-j",
    "--jobs",
    type=click.IntRange(min=1),
    help="Maximum number of concurrent adaptation runs.",
    default=1,
    show_default=True,
    show_envvar=True,
    envvar="CAMADAPT_JOBS",
)
@click.version_option(__version__, prog_name="camadapt")
def cli(  # noqa: PLR0913
    *,
    verbose: int,
    quiet: bool,
    logging_plain: bool,
    seed: int | None,
    dry_run: bool,
    jobs: int,
) -> None:
    """Camera-brand domain shift studies and residual-CycleGAN adaptation."""
    set_settings(Settings(seed=seed, dry_run=dry_run, jobs=jobs))
    configure_logging(verbose=verbose, quiet=quiet, plain=logging_plain)


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Synthetic dataset config (JSON). Defaults to the five-brand benchmark.",
    default=None,
)
def synth(out_dir: Path, config_path: Path | None) -> None:
    """Generate a synthetic brand-shift dataset into OUT_DIR."""
    if config_path is None:
        seed = get_settings().seed
        config = default_benchmark_config(0 if seed is None else seed)
    else:
        config = load_config(config_path, SynthDatasetConfig)
    if _dry_run(f"would generate brands {sorted(config.filters)} into {out_dir}"):
        return
    manifest = build_synth_dataset(config, out_dir)
    click.echo(f"Wrote {len(manifest)} images to {out_dir}")


@cli.command()
@click.argument(
    "manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option(
    "-s", "--size", type=int, help="Output side length.", default=64, show_default=True
)
@task_option
def prep(manifest_path: Path, out_dir: Path, size: int, task: str) -> None:
    """Square, resize and normalize the fundus images of a manifest."""
    manifest = load_manifest(manifest_path, task)
    if _dry_run(f"would preprocess {len(manifest)} images to {size}x{size}"):
        return
    result = preprocess_dataset(manifest, out_dir, size)
    click.echo(f"Preprocessed {len(result)} of {len(manifest)} images into {out_dir}")


@cli.command("train-cls")
@click.argument(
    "manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--source", required=True, help="The labeled source brand.")
@click.option(
    "-o",
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory for classifier.pt and losses.csv.",
)
@click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    help="Training config (JSON).",
    default=None,
)
@click.option(
    "--arch",
    type=click.Choice(["small", "resnet50"]),
    default="small",
    show_default=True,
    help="Classifier architecture.",
)
@task_option
@binary_option
def train_cls(  # noqa: PLR0913
    *,
    manifest_path: Path,
    source: str,
    out_dir: Path,
    config_path: str | None,
    arch: Literal["small", "resnet50"],
    task: str,
    binary: bool,
) -> None:
    """Train the source classifier on one brand's train split."""
    manifest = load_manifest(manifest_path, task)
    if binary:
        manifest = manifest.to_binary()
    config = _train_config(config_path, classifier_train_config())
    arch_config = ClassifierConfig(
        arch=arch, num_classes=manifest.task.num_classes, image_size=config.image_size
    )
    plan = f"would train a {arch} classifier on {source} for {config.epochs} epochs"
    if _dry_run(plan):
        return
    train_classifier(manifest, source, config, arch_config, out_dir=out_dir)
    click.echo(f"Classifier written to {out_dir}")


@cli.command("train-adapt")
@click.argument(
    "manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "--classifier",
    "classifier_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Classifier checkpoint.",
)
@click.option("--source", required=True, help="The labeled source brand.")
@click.option("--target", required=True, help="The unlabeled target brand.")
@click.option(
    "-o",
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="The run directory.",
)
@click.option(
    "-c",
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    help="Adaptation config (JSON).",
    default=None,
)
@click.option(
    "--features",
    "features_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Camera feature config (JSON), e.g. to ablate feature blocks.",
    default=None,
)
@task_option
@binary_option
def train_adapt(  # noqa: PLR0913
    *,
    manifest_path: Path,
    classifier_path: Path,
    source: str,
    target: str,
    out_dir: Path,
    config_path: str | None,
    features_path: Path | None,
    task: str,
    binary: bool,
) -> None:
    """Learn the transformation of TARGET images towards the SOURCE brand."""
    manifest = load_manifest(manifest_path, task)
    if binary:
        manifest = manifest.to_binary()
    config = _train_config(config_path, TrainConfig())
    features = (
        load_config(features_path, FeatureConfig) if features_path else FeatureConfig()
    )
    classifier = load_classifier(classifier_path)
    if _dry_run(f"would adapt {target} -> {source} for {config.epochs} epochs"):
        return
    run = train_adaptation(
        manifest, source, target, classifier, config, features=features, out_dir=out_dir
    )
    click.echo(
        f"Adaptation run written to {out_dir} (oscillation {run.oscillation:.4f})"
    )


def _input_images(paths: tuple[Path, ...]) -> list[Path]:
    files: list[Path] = []
    for path in paths:
        if path.is_dir():
            files += sorted(
                p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
            )
        else:
            files.append(path)
    return files


@cli.command("transform")
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.argument("inputs", nargs=-1, type=click.Path(exists=True, path_type=Path))
@click.option(
    "-o",
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Directory for transformed images and residue heatmaps.",
)
@click.option(
    "--resize",
    is_flag=True,
    help="Square and resize inputs to the checkpoint resolution.",
)
def transform_cmd(
    *, checkpoint: Path, inputs: tuple[Path, ...], out_dir: Path, resize: bool
) -> None:
    """Apply the G of an adaptation checkpoint or run directory to images."""
    gen = load_generator(checkpoint)
    size = gen.config.image_size
    files = _input_images(inputs)
    images = []
    for path in files:
        image = load_image(path)
        if resize:
            image = square_and_resize(image, size)
        elif image.shape[:2] != (size, size):
            msg = (
                f"{path} is {image.shape[1]}x{image.shape[0]}, the checkpoint "
                f"expects {size}x{size}"
            )
            raise ArtifactMismatchError(msg)
        images.append(image)
    if _dry_run(f"would transform {len(files)} images into {out_dir}"):
        return
    for path, image in zip(files, images, strict=True):
        with torch.no_grad():
            transformed, residue = transform(gen, to_tensor(image))
        save_image(out_dir / f"{path.stem}.png", to_image(transformed[0]))
        save_image(
            out_dir / f"{path.stem}_residue.png", to_image(residue_heatmap(residue[0]))
        )
    click.echo(f"Transformed {len(files)} images into {out_dir}")


@cli.command("eval")
@click.argument(
    "manifest_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "--classifier",
    "classifier_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Classifier checkpoint.",
)
@click.option("--source", required=True, help="The source brand of the classifier.")
@click.option(
    "--runs",
    "runs_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="Directory of adaptation run directories, one per target brand.",
)
@click.option(
    "-o",
    "--out",
    "out_path",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="Report file.",
)
@click.option(
    "-f",
    "--format",
    "fmt",
    type=click.Choice(REPORT_FORMATS),
    default="md",
    show_default=True,
)
@task_option
@binary_option
def eval_cmd(  # noqa: PLR0913
    *,
    manifest_path: Path,
    classifier_path: Path,
    source: str,
    runs_dir: Path | None,
    out_path: Path,
    fmt: Literal["csv", "json", "md"],
    task: str,
    binary: bool,
) -> None:
    """Evaluate every brand's test split, adapted where a run exists."""
    manifest = load_manifest(manifest_path, task)
    if binary:
        manifest = manifest.to_binary()
    classifier = load_classifier(classifier_path)
    registry = (
        AdaptationRegistry.load(runs_dir, classifier)
        if runs_dir
        else AdaptationRegistry(classifier)
    )
    if _dry_run(f"would evaluate {manifest.brands} with runs for {registry.brands}"):
        return
    results = evaluate_matrix(
        classifier, manifest, {brand: registry[brand] for brand in registry.brands}
    )
    seed = get_settings().seed
    report = StudyReport(
        metadata=ReportMetadata(
            seed=0 if seed is None else seed,
            config_hash=parameter_hash(classifier),
            version=__version__,
            source=source,
            task=manifest.task,
        ),
        results=results,
    )
    emit_report(report, out_path, fmt)
    click.echo(report.table().to_string(na_rep="-", float_format="%.4f"))


@cli.command()
@click.argument(
    "spec_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "--shift-only",
    is_flag=True,
    help="Only train the classifier and evaluate all brands unadapted.",
)
def study(*, spec_path: Path, shift_only: bool) -> None:
    """Run the experiment described by an ExperimentSpec JSON file."""
    spec = load_config(spec_path, ExperimentSpec)
    kind = "shift" if shift_only else "adaptation"
    if _dry_run(f"would run the {kind} study into {spec.out_dir}"):
        return
    if shift_only:
        report = run_shift_study(spec)
    else:
        report = asyncio.run(run_adaptation_study(spec, jobs=get_settings().jobs))
    click.echo(report.table().to_string(na_rep="-", float_format="%.4f"))


@cli.command()
@click.option(
    "-s",
    "--size",
    type=int,
    default=16,
    show_default=True,
    help="Image side length of the toy problem, a multiple of 16.",
    callback=_gradcheck_size,
)
@click.option("--corrupt-gradients", is_flag=True, hidden=True)
def gradcheck(*, size: int, corrupt_gradients: bool) -> None:
    """Compare loss gradients with central finite differences at float64."""
    seed = get_settings().seed
    hook = (lambda g: g * CORRUPTION_FACTOR) if corrupt_gradients else None
    report = run_gradcheck(size, 0 if seed is None else seed, gradient_hook=hook)
    click.echo(f"{'term':<8}{'max rel err':>14}{'checked':>9}  status")
    for row in report.rows:
        status = "ok" if row.passed else "FAIL"
        click.echo(
            f"{row.term:<8}{row.max_rel_error:>14.3e}{row.checked:>9}  {status}"
        )
    if not report.passed:
        msg = f"Gradient check failed (tolerance {report.tolerance:g})"
        raise CheckFailedError(msg)


@cli.command("report")
@click.argument(
    "report_path", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option(
    "-f",
    "--format",
    "fmt",
    type=click.Choice(REPORT_FORMATS),
    default="md",
    show_default=True,
)
@click.option(
    "-o",
    "--out",
    "out_path",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="Output file.",
)
def report_cmd(
    *, report_path: Path, fmt: Literal["csv", "json", "md"], out_path: Path
) -> None:
    """Convert a JSON study report to another format."""
    loaded = load_report(report_path)
    if _dry_run(f"would write {fmt} report {out_path}"):
        return
    emit_report(loaded, out_path, fmt)
    click.echo(f"Wrote {out_path}")


if __name__ == "__main__":
    cli()
