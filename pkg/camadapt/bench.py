"""End-to-end experiments: quantify the camera domain shift, adapt, report.

A study directory holds::

    spec.json                  # the ExperimentSpec
    data/                      # generated synthetic dataset, if any
    classifier/                # classifier.pt and losses.csv
    adapt/<brand>/             # one adaptation run directory per target
    monitors/<brand>.png       # final before/after grid per target
    report.{csv,json,md}
    study.log                  # package log records of every run of the study
"""

import asyncio
import hashlib
import logging
from pathlib import Path
from typing import Literal

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from camadapt import __version__
from camadapt.features import FeatureConfig
from camadapt.imaging.synth import SynthDatasetConfig, build_synth_dataset
from camadapt.manifest import Manifest, load_manifest
from camadapt.metrics import evaluate_matrix
from camadapt.models.checkpoint import load_checkpoint, load_classifier
from camadapt.models.classifier import Classifier, ClassifierConfig
from camadapt.models.discriminator import DiscriminatorConfig
from camadapt.models.generator import GeneratorConfig
from camadapt.training.adaptation import (
    MONITOR_DIR,
    AdaptationRun,
    compute_feature_stats,
    monitor_snapshot,
    train_adaptation,
)
from camadapt.training.classifier import train_classifier
from camadapt.training.config import TrainConfig, classifier_train_config
from camadapt.training.data import load_images
from camadapt.types import (
    ConfigError,
    DatasetIOError,
    DomainId,
    EvalResult,
    Split,
    Task,
)
from camadapt.utils.logging import log_file

logger = logging.getLogger(__name__)

SPEC_FILE = "spec.json"
CLASSIFIER_DIR = "classifier"
CLASSIFIER_FILE = "classifier.pt"
ADAPT_DIR = "adapt"
DATA_DIR = "data"
REPORT_STEM = "report"
LOG_FILE = "study.log"
CLASSIFIER_FIELDS = {
    "synthetic",
    "manifest",
    "task",
    "source",
    "classifier",
    "arch",
    "seed",
}

type ReportFormat = Literal["csv", "json", "md"]
REPORT_FORMATS: tuple[ReportFormat, ...] = ("csv", "json", "md")


class ExperimentSpec(BaseModel):
    """One experiment: a dataset, a source brand and the target brands to adapt.

    Attributes:
        synthetic (SynthDatasetConfig | None): Generate this synthetic dataset.
        manifest (Path | None): Or use the dataset of this manifest CSV.
        task (Task): Task of the manifest grades; synthetic datasets carry their
            own.
        source (DomainId): The labeled source brand.
        targets (tuple[DomainId, ...]): Target brands, adapted independently.
        classifier (TrainConfig): Classifier training hyperparameters.
        adaptation (TrainConfig): Adaptation hyperparameters.
        arch (ClassifierConfig | None): Classifier architecture.
        generator (GeneratorConfig | None): Generator architecture.
        discriminator (DiscriminatorConfig): Discriminator architecture.
        features (FeatureConfig): Camera feature layout.
        out_dir (Path): The study directory.
        seed (int): Seed of the dataset and of every training run.
    """

    synthetic: SynthDatasetConfig | None = None
    manifest: Path | None = None
    task: Task = Task.grading5
    source: DomainId = "A"
    targets: tuple[DomainId, ...] = Field(default=("B", "C", "D", "E"), min_length=1)
    classifier: TrainConfig = Field(default_factory=classifier_train_config)
    adaptation: TrainConfig = Field(default_factory=TrainConfig)
    arch: ClassifierConfig | None = None
    generator: GeneratorConfig | None = None
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    out_dir: Path = Path("study")
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_experiment(self) -> "ExperimentSpec":
        if (self.synthetic is None) == (self.manifest is None):
            msg = "Exactly one of 'synthetic' and 'manifest' must be given"
            raise ValueError(msg)
        if self.source in self.targets:
            msg = f"Source brand {self.source!r} is also a target"
            raise ValueError(msg)
        if len(set(self.targets)) != len(self.targets):
            msg = f"Duplicate target brands in {self.targets}"
            raise ValueError(msg)
        if self.synthetic is not None:
            missing = {self.source, *self.targets} - set(self.synthetic.filters)
            if missing:
                msg = f"Brands {sorted(missing)} have no filter in the dataset"
                raise ValueError(msg)
        return self

    def seeded(self, config: TrainConfig) -> TrainConfig:
        """Return a training config that uses the experiment seed."""
        return config.model_copy(update={"seed": self.seed})

    def config_hash(self) -> str:
        """SHA-256 of the experiment without its output directory."""
        payload = self.model_dump_json(exclude={"out_dir"})
        return hashlib.sha256(payload.encode()).hexdigest()

    def classifier_hash(self) -> str:
        """SHA-256 of the fields that determine the trained classifier."""
        payload = self.model_dump_json(include=CLASSIFIER_FIELDS)
        return hashlib.sha256(payload.encode()).hexdigest()


class ReportMetadata(BaseModel):
    """Provenance of a report."""

    seed: int
    config_hash: str
    version: str
    source: DomainId
    task: Task

    model_config = ConfigDict(frozen=True)


class StudyReport(BaseModel):
    """Evaluation results of a study and their provenance."""

    metadata: ReportMetadata
    results: list[EvalResult]

    model_config = ConfigDict(frozen=True)

    def table(self) -> pd.DataFrame:
        """Brands as rows, unadapted and adapted metric values as columns.

        Brands without an adapted result, the source brand included, have no
        value in the adapted column.
        """
        rows: dict[DomainId, dict[str, float | None]] = {}
        for result in self.results:
            row = rows.setdefault(
                result.brand, {"no_adaptation": None, "adapted": None}
            )
            row["adapted" if result.adapted else "no_adaptation"] = result.value
        frame = pd.DataFrame.from_dict(rows, orient="index", dtype="float64")
        frame.index.name = "brand"
        return frame.sort_index()

    def value(self, brand: DomainId, *, adapted: bool = False) -> float:
        """Return one cell of the table.

        Raises:
            KeyError: If the cell is missing.
        """
        for result in self.results:
            if result.brand == brand and result.adapted == adapted:
                return result.value
        msg = f"No {'adapted' if adapted else 'unadapted'} result for {brand!r}"
        raise KeyError(msg)


def _markdown(report: StudyReport) -> str:
    meta = report.metadata
    metric = report.results[0].metric_name.upper()
    lines = [
        f"# Camera adaptation study ({metric})",
        "",
        f"- source: {meta.source}",
        f"- task: {meta.task.value}",
        f"- seed: {meta.seed}",
        f"- config hash: {meta.config_hash}",
        f"- version: {meta.version}",
        "",
        "| Brand | No adaptation | Adapted |",
        "|---|---|---|",
    ]
    for brand, row in report.table().iterrows():
        cells = [
            "-" if pd.isna(row[column]) else f"{row[column]:.4f}"
            for column in ("no_adaptation", "adapted")
        ]
        lines.append(f"| {brand} | {cells[0]} | {cells[1]} |")
    return "\n".join(lines) + "\n"


def _csv(report: StudyReport) -> str:
    header = "".join(
        f"# {key}: {value}\n"
        for key, value in report.metadata.model_dump(mode="json").items()
    )
    return header + report.table().to_csv(lineterminator="\n", float_format="%.6f")


def emit_report(report: StudyReport, path: Path, fmt: ReportFormat) -> Path:
    """Write a report as CSV, JSON or a markdown table.

    Output is deterministic: brands are sorted and no timestamps are written.

    Args:
        report: The results; must not be empty.
        path: The destination file.
        fmt: ``csv`` (metadata as ``#`` comment lines), ``json`` or ``md``.

    Returns:
        Path: The written file.

    Raises:
        ValueError: If the report has no results.
        DatasetIOError: If the file cannot be written.
    """
    if not report.results:
        msg = "Cannot emit an empty report"
        raise ValueError(msg)
    match fmt:
        case "csv":
            text = _csv(report)
        case "json":
            text = report.model_dump_json(indent=2) + "\n"
        case "md":
            text = _markdown(report)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        msg = f"Cannot write report {path}: {e}"
        raise DatasetIOError(msg) from e
    logger.info("Wrote %s report %s", fmt, path)
    return path


def load_report(path: Path) -> StudyReport:
    """Read a JSON report.

    Raises:
        DatasetIOError: If the file cannot be read.
    """
    try:
        return StudyReport.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        msg = f"Cannot read report {path}: {e}"
        raise DatasetIOError(msg) from e


def emit_reports(report: StudyReport, out_dir: Path) -> list[Path]:
    """Write ``report.csv``, ``report.json`` and ``report.md``."""
    return [
        emit_report(report, out_dir / f"{REPORT_STEM}.{fmt}", fmt)
        for fmt in REPORT_FORMATS
    ]


def write_spec(spec: ExperimentSpec) -> Path:
    """Write ``spec.json`` into the study directory."""
    path = spec.out_dir / SPEC_FILE
    try:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(spec.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        msg = f"Cannot write {path}: {e}"
        raise DatasetIOError(msg) from e
    return path


def prepare_dataset(spec: ExperimentSpec) -> Manifest:
    """Generate the synthetic dataset or load the manifest of an experiment.

    Raises:
        ConfigError: If a brand of the experiment is not declared in the dataset.
    """
    if spec.synthetic is not None:
        manifest = build_synth_dataset(
            spec.synthetic, spec.out_dir / DATA_DIR, seed=spec.seed
        )
    elif spec.manifest is not None:
        manifest = load_manifest(spec.manifest, spec.task)
    else:
        msg = "The experiment names no dataset"
        raise ConfigError(msg)
    missing = {spec.source, *spec.targets} - manifest.declared_brands
    if missing:
        msg = f"Brands {sorted(missing)} are not declared in the dataset"
        raise ConfigError(msg)
    return manifest


def prepare_classifier(spec: ExperimentSpec, manifest: Manifest) -> Classifier:
    """Load the study's classifier checkpoint, training it first if needed.

    A checkpoint is reused only when it was trained for the same dataset, source,
    seed, hyperparameters and architecture; otherwise it is retrained.
    """
    arch = spec.arch or ClassifierConfig(
        num_classes=manifest.task.num_classes,
        image_size=spec.classifier.image_size,
    )
    path = spec.out_dir / CLASSIFIER_DIR / CLASSIFIER_FILE
    provenance = spec.classifier_hash()
    if path.exists():
        if load_checkpoint(path, kind="classifier").provenance == provenance:
            logger.info("Reusing classifier %s", path)
            return load_classifier(path, expected=arch)
        logger.warning(
            "Classifier %s was trained for another experiment, retraining", path
        )
    return train_classifier(
        manifest,
        spec.source,
        spec.seeded(spec.classifier),
        arch,
        out_dir=spec.out_dir / CLASSIFIER_DIR,
        provenance=provenance,
    )


def _report(
    spec: ExperimentSpec, manifest: Manifest, results: list[EvalResult]
) -> StudyReport:
    return StudyReport(
        metadata=ReportMetadata(
            seed=spec.seed,
            config_hash=spec.config_hash(),
            version=__version__,
            source=spec.source,
            task=manifest.task,
        ),
        results=results,
    )


def run_shift_study(spec: ExperimentSpec) -> StudyReport:
    """Train on the source brand and evaluate every brand without adaptation.

    Args:
        spec: The experiment.

    Returns:
        StudyReport: One unadapted result per brand; also written to the study
            directory.
    """
    write_spec(spec)
    with log_file(spec.out_dir / LOG_FILE):
        manifest = prepare_dataset(spec)
        classifier = prepare_classifier(spec, manifest)
        report = _report(spec, manifest, evaluate_matrix(classifier, manifest))
        emit_reports(report, spec.out_dir)
    return report


def _write_final_monitor(
    spec: ExperimentSpec, manifest: Manifest, run: AdaptationRun
) -> None:
    records = manifest.select(run.target, Split.train)
    images = load_images(
        manifest,
        records[: run.config.monitor_set_size],
        run.config.image_size,
        phase=f"adapt:{run.target}",
    )
    dtype = next(run.classifier.parameters()).dtype
    monitor_snapshot(
        run, images.to(dtype), spec.out_dir / MONITOR_DIR / f"{run.target}.png"
    )


async def run_adaptation_study(
    spec: ExperimentSpec,
    *,
    jobs: int = 1,
) -> StudyReport:
    """Adapt every target brand and compare adapted with unadapted results.

    Target runs are independent and execute in worker threads, at most ``jobs``
    at a time. Results are merged in sorted brand order.

    Args:
        spec: The experiment.
        jobs: Maximum number of concurrent adaptation runs.

    Returns:
        StudyReport: Unadapted results for every brand and adapted results for
            the targets; also written to the study directory.
    """
    write_spec(spec)
    with log_file(spec.out_dir / LOG_FILE):
        return await _adapt_targets(spec, jobs)


async def _adapt_targets(spec: ExperimentSpec, jobs: int) -> StudyReport:
    manifest = prepare_dataset(spec)
    classifier = prepare_classifier(spec, manifest)
    stats = compute_feature_stats(manifest, spec.source, classifier, spec.features)
    config = spec.seeded(spec.adaptation)
    sem = asyncio.Semaphore(max(1, jobs))

    async def adapt(target: DomainId) -> AdaptationRun:
        async with sem:
            logger.info("Starting adaptation of %s", target)
            run = await asyncio.to_thread(
                train_adaptation,
                manifest,
                spec.source,
                target,
                classifier,
                config,
                generator=spec.generator,
                discriminator=spec.discriminator,
                features=spec.features,
                stats=stats,
                out_dir=spec.out_dir / ADAPT_DIR / target,
            )
            await asyncio.to_thread(_write_final_monitor, spec, manifest, run)
            return run

    async with asyncio.TaskGroup() as tg:
        tasks = {target: tg.create_task(adapt(target)) for target in spec.targets}
    runs = {target: tasks[target].result() for target in sorted(tasks)}

    report = _report(spec, manifest, evaluate_matrix(classifier, manifest, runs))
    emit_reports(report, spec.out_dir)
    return report
