"""Unsupervised adaptation of one target brand towards the labeled source brand.

Domain A is the source brand and domain B the target brand. Generator F maps A to
B, generator G maps B to A and is the transformation used at test time. The
discriminators D_A and D_B score camera feature vectors of their domain.

A run directory holds::

    run.json                 # RunRecord: brands, configs, step, diagnostics
    losses.csv               # one row every checkpoint_every steps
    checkpoints/step_*.pt    # periodic adaptation checkpoints
    checkpoints/final.pt
    monitors/step_*.png      # before/after grids of the monitor set
"""

import copy
import itertools
import json
import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, ValidationError
from torch import nn

from camadapt.features import (
    CameraFeatureExtractor,
    FeatureConfig,
    FeatureStats,
    normalized_color_histogram,
)
from camadapt.losses import (
    CycleForward,
    adversarial_loss,
    cycle_forward,
    cycle_loss,
    identity_loss,
    total_loss,
    weighted_objective,
)
from camadapt.manifest import Manifest
from camadapt.models.checkpoint import (
    Checkpoint,
    load_checkpoint,
    parameter_hash,
    save_checkpoint,
)
from camadapt.models.classifier import Classifier, ClassifierOutput, classify
from camadapt.models.discriminator import Discriminator, DiscriminatorConfig
from camadapt.models.generator import GeneratorConfig, ResidualGenerator, transform
from camadapt.training.config import TrainConfig, lr_at
from camadapt.training.data import load_images, seeded_loader
from camadapt.training.monitor import MonitorSnapshot, generator_snapshot
from camadapt.types import (
    ArtifactMismatchError,
    CheckFailedError,
    ConfigError,
    DatasetIOError,
    DomainId,
    EmptyDatasetError,
    FeatureMode,
    LossBreakdown,
    NonFiniteLossError,
    Split,
    UnknownBrandError,
)

logger = logging.getLogger(__name__)

RUN_FILE = "run.json"
LOSSES_FILE = "losses.csv"
CHECKPOINT_DIR = "checkpoints"
MONITOR_DIR = "monitors"
FINAL_CHECKPOINT = "final.pt"
FEATURE_BATCH = 64


class RunRecord(BaseModel):
    """Contents of ``run.json``."""

    source: DomainId
    target: DomainId
    step: int
    classifier_hash: str
    oscillation: float | None = None
    divergences: dict[int, float] = {}
    train: TrainConfig
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    features: FeatureConfig

    model_config = ConfigDict(frozen=True, extra="forbid")


@dataclass
class AdaptationRun:
    """Models and diagnostics of one source/target adaptation.

    Attributes:
        source (DomainId): The labeled source brand, domain A.
        target (DomainId): The unlabeled target brand, domain B.
        f (ResidualGenerator): Generator F, domain A to domain B.
        g (ResidualGenerator): Generator G, domain B to domain A.
        d_a (Discriminator): Discriminator of domain-A camera features.
        d_b (Discriminator): Discriminator of domain-B camera features.
        classifier (Classifier): The frozen source classifier.
        feature_config (FeatureConfig): Camera feature layout.
        stats (FeatureStats): Frozen standardization statistics.
        config (TrainConfig): Training hyperparameters.
        source_histogram (torch.Tensor): Mean hard histogram of the source train
            images, the reference of the monitor divergence.
        classifier_hash (str): Parameter hash of the classifier at run start.
        step (int): Optimizer steps taken.
        losses (list[dict]): Logged loss rows.
        monitors (list[MonitorSnapshot]): Monitor divergences per logged step.
        oscillation (float | None): Standard deviation of the total loss over the
            last epoch.
    """

    source: DomainId
    target: DomainId
    f: ResidualGenerator
    g: ResidualGenerator
    d_a: Discriminator
    d_b: Discriminator
    classifier: Classifier
    feature_config: FeatureConfig
    stats: FeatureStats
    config: TrainConfig
    source_histogram: torch.Tensor
    classifier_hash: str
    step: int = 0
    losses: list[dict[str, float | int]] = field(default_factory=list)
    monitors: list[MonitorSnapshot] = field(default_factory=list)
    oscillation: float | None = None

    @property
    def extractor(self) -> CameraFeatureExtractor:
        """The camera feature extractor shared by both discriminators."""
        return CameraFeatureExtractor(self.classifier, self.feature_config, self.stats)

    def modules(self) -> dict[str, nn.Module]:
        """The trainable networks by checkpoint name."""
        return {"F": self.f, "G": self.g, "D_A": self.d_a, "D_B": self.d_b}

    def record(self) -> RunRecord:
        """Describe the run for ``run.json``."""
        return RunRecord(
            source=self.source,
            target=self.target,
            step=self.step,
            classifier_hash=self.classifier_hash,
            oscillation=self.oscillation,
            divergences={s.step: s.divergence for s in self.monitors},
            train=self.config,
            generator=self.f.config,
            discriminator=self.d_a.config,
            features=self.feature_config,
        )

    def checkpoint(self) -> Checkpoint:
        """Snapshot the networks and frozen tensors of the run."""
        return Checkpoint(
            kind="adaptation",
            config=self.record().model_dump(mode="json"),
            modules={name: m.state_dict() for name, m in self.modules().items()},
            step=self.step,
            tensors={
                "stats_mean": self.stats.mean,
                "stats_std": self.stats.std,
                "source_histogram": self.source_histogram,
            },
        )


def _raw_features(
    extractor: CameraFeatureExtractor, images: torch.Tensor
) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat(
            [extractor.raw(chunk) for chunk in images.split(FEATURE_BATCH)]
        )


def feature_stats_of(
    classifier: Classifier,
    images: torch.Tensor,
    config: FeatureConfig | None = None,
) -> FeatureStats:
    """Standardization statistics of hard-mode camera features of an image batch.

    Raises:
        EmptyDatasetError: If there are no images.
    """
    if images.shape[0] == 0:
        msg = "Cannot compute feature statistics of an empty image set"
        raise EmptyDatasetError(msg)
    extractor = CameraFeatureExtractor(classifier, config)
    return FeatureStats.from_vectors(_raw_features(extractor, images))


def compute_feature_stats(
    manifest: Manifest,
    source: DomainId,
    classifier: Classifier,
    config: FeatureConfig | None = None,
) -> FeatureStats:
    """Per-dimension mean and std of camera features over the source train split.

    Args:
        manifest: The dataset.
        source: The source brand.
        classifier: Source of the deep feature block.
        config: The feature layout.

    Returns:
        FeatureStats: Frozen statistics, std floored at 1e-6.

    Raises:
        EmptyDatasetError: If the source brand has no train images.
    """
    records = manifest.select(source, Split.train)
    images = load_images(
        manifest, records, classifier.config.image_size, phase="feature-stats"
    )
    stats = feature_stats_of(classifier, images, config)
    logger.info(
        "Computed %d-dimensional feature statistics over %d %s images",
        stats.width,
        len(records),
        source,
    )
    return stats


def _set_requires_grad(
    modules: Iterable[nn.Module],
    flag: bool,  # noqa: FBT001
) -> None:
    for module in modules:
        module.requires_grad_(flag)


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


class AdaptationTrainer:
    """Alternating minimax training of F, G, D_A and D_B for one target brand.

    Each batch pair first updates the discriminators to ascend both adversarial
    terms with the generators frozen, then updates the generators to descend the
    weighted total with the discriminators frozen. The classifier is never updated.

    Discriminators score hard-binned features of real images. Transformed images
    use soft binning in the generator step so gradients reach the generators, and
    hard binning in the discriminator step.
    """

    def __init__(  # noqa: PLR0913
        self,
        source: DomainId,
        target: DomainId,
        source_images: torch.Tensor,
        target_images: torch.Tensor,
        classifier: Classifier,
        config: TrainConfig,
        *,
        generator: GeneratorConfig | None = None,
        discriminator: DiscriminatorConfig | None = None,
        features: FeatureConfig | None = None,
        stats: FeatureStats | None = None,
    ) -> None:
        """Build fresh networks for one adaptation.

        All networks take the dtype of the classifier parameters.

        Args:
            source: The source brand.
            target: The target brand.
            source_images: Source train images, shape (N, 3, S, S).
            target_images: Target train images, shape (M, 3, S, S).
            classifier: The trained source classifier; it stays frozen.
            config: Training hyperparameters.
            generator: Generator architecture; sized to ``config.image_size``.
            discriminator: Discriminator architecture.
            features: Camera feature layout.
            stats: Standardization statistics; computed from the source images
                when omitted.

        Raises:
            ConfigError: If the image sizes of the configs disagree.
            EmptyDatasetError: If either image set is empty.
        """
        if source_images.shape[0] == 0 or target_images.shape[0] == 0:
            msg = f"Adaptation {source} -> {target} needs images of both brands"
            raise EmptyDatasetError(msg)
        gen_config = generator or GeneratorConfig(image_size=config.image_size)
        sizes = {config.image_size, gen_config.image_size, classifier.config.image_size}
        if len(sizes) > 1:
            msg = (
                "Train, generator and classifier image sizes differ: "
                f"{sorted(sizes)}"
            )
            raise ConfigError(msg)

        # The trainer owns the classifier for the run, frozen.
        classifier.requires_grad_(False)
        dtype = next(classifier.parameters()).dtype
        self.config = config
        self.source_images = source_images.to(dtype)
        self.target_images = target_images.to(dtype)
        feature_config = features or FeatureConfig()
        stats = stats or feature_stats_of(
            classifier, self.source_images, feature_config
        )
        self.extractor = CameraFeatureExtractor(classifier, feature_config, stats)

        seed = config.seed
        width = self.extractor.width
        self.run = AdaptationRun(
            source=source,
            target=target,
            f=ResidualGenerator(gen_config, seed=seed).to(dtype),
            g=ResidualGenerator(gen_config, seed=seed + 1).to(dtype),
            d_a=Discriminator(width, discriminator, seed=seed + 2).to(dtype),
            d_b=Discriminator(width, discriminator, seed=seed + 3).to(dtype),
            classifier=classifier,
            feature_config=feature_config,
            stats=stats,
            config=config,
            source_histogram=normalized_color_histogram(
                self.source_images, feature_config.bins
            ).mean(dim=0),
            classifier_hash=parameter_hash(classifier),
        )
        run = self.run
        betas = (config.beta1, config.beta2)
        self.opt_d = torch.optim.Adam(
            itertools.chain(run.d_a.parameters(), run.d_b.parameters()),
            lr=config.lr_start,
            betas=betas,
        )
        self.opt_g = torch.optim.Adam(
            itertools.chain(run.f.parameters(), run.g.parameters()),
            lr=config.lr_start,
            betas=betas,
        )
        self.monitor_images = self._pick_monitor_images()

    def _pick_monitor_images(self) -> torch.Tensor:
        n = self.target_images.shape[0]
        k = min(self.config.monitor_set_size, n)
        generator = torch.Generator().manual_seed(self.config.seed)
        order = torch.randperm(n, generator=generator)
        return self.target_images[order[:k].sort().values]

    def gan_terms(
        self,
        a_batch: torch.Tensor,
        b_batch: torch.Tensor,
        mode: FeatureMode = "hard",
        *,
        forward: CycleForward | None = None,
        non_saturating: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """The adversarial terms ``(gan_F, gan_G)`` of a batch pair.

        Args:
            a_batch: Source images.
            b_batch: Target images.
            mode: Binning of the transformed images' features.
            forward: Precomputed generator pass over the same batches.
            non_saturating: Use the non-saturating fake term.

        Returns:
            tuple[torch.Tensor, torch.Tensor]: F against D_B, G against D_A.
        """
        run = self.run
        fwd = forward or cycle_forward(run.f, run.g, a_batch, b_batch)
        with torch.no_grad():
            real_a = self.extractor(a_batch).vector
            real_b = self.extractor(b_batch).vector
        fake_b = self.extractor(fwd.a_b, mode).vector
        fake_a = self.extractor(fwd.b_a, mode).vector
        gan_f = adversarial_loss(run.d_b, real_b, fake_b, non_saturating=non_saturating)
        gan_g = adversarial_loss(run.d_a, real_a, fake_a, non_saturating=non_saturating)
        return gan_f, gan_g

    def objective(
        self, a_batch: torch.Tensor, b_batch: torch.Tensor, mode: FeatureMode = "soft"
    ) -> tuple[torch.Tensor, LossBreakdown]:
        """The generator objective of a batch pair and its breakdown.

        Raises:
            NonFiniteLossError: If a term is NaN or infinite.
        """
        run, cfg = self.run, self.config
        fwd = cycle_forward(run.f, run.g, a_batch, b_batch)
        gan_f, gan_g = self.gan_terms(
            a_batch, b_batch, mode, forward=fwd, non_saturating=cfg.non_saturating
        )
        cyc = cycle_loss(run.f, run.g, a_batch, b_batch, cfg.norm, forward=fwd)
        idt = identity_loss(run.f, run.g, a_batch, b_batch, cfg.norm)
        breakdown = total_loss(gan_f, gan_g, cyc, idt, cfg.lambda1, cfg.lambda2)
        return weighted_objective(
            gan_f, gan_g, cyc, idt, cfg.lambda1, cfg.lambda2
        ), breakdown

    def d_step(
        self, a_batch: torch.Tensor, b_batch: torch.Tensor
    ) -> tuple[float, float]:
        """Update D_A and D_B to ascend both adversarial terms.

        Returns:
            tuple[float, float]: ``(gan_F, gan_G)`` before the update.

        Raises:
            NonFiniteLossError: If a term is NaN or infinite; nothing is updated.
        """
        run = self.run
        with torch.no_grad():
            fwd = cycle_forward(run.f, run.g, a_batch, b_batch)
        gan_f, gan_g = self.gan_terms(a_batch, b_batch, "hard", forward=fwd)
        for term, value in (("gan_F", float(gan_f)), ("gan_G", float(gan_g))):
            if not math.isfinite(value):
                raise NonFiniteLossError(term, value)
        loss = -(gan_f + gan_g)
        self.opt_d.zero_grad()
        loss.backward()
        self.opt_d.step()
        return float(gan_f), float(gan_g)

    def g_step(self, a_batch: torch.Tensor, b_batch: torch.Tensor) -> LossBreakdown:
        """Update F and G to descend the weighted total.

        Returns:
            LossBreakdown: The terms before the update.

        Raises:
            NonFiniteLossError: If a term is NaN or infinite; nothing is updated.
        """
        discriminators = (self.run.d_a, self.run.d_b)
        _set_requires_grad(discriminators, False)
        try:
            objective, breakdown = self.objective(a_batch, b_batch)
            self.opt_g.zero_grad()
            objective.backward()
            self.opt_g.step()
        finally:
            _set_requires_grad(discriminators, True)
        return breakdown

    def train_step(
        self, a_batch: torch.Tensor, b_batch: torch.Tensor
    ) -> LossBreakdown:
        """One D update followed by one F/G update.

        Returns:
            LossBreakdown: The generator terms before the update.

        Raises:
            NonFiniteLossError: If a term is NaN or infinite. D_A, D_B and their
                optimizer are put back to their state before the step.
        """
        run = self.run
        saved = copy.deepcopy(
            (run.d_a.state_dict(), run.d_b.state_dict(), self.opt_d.state_dict())
        )
        try:
            self.d_step(a_batch, b_batch)
            return self.g_step(a_batch, b_batch)
        except NonFiniteLossError:
            run.d_a.load_state_dict(saved[0])
            run.d_b.load_state_dict(saved[1])
            self.opt_d.load_state_dict(saved[2])
            raise

    def fit(self, out_dir: Path | None = None) -> AdaptationRun:
        """Train for ``config.epochs`` epochs.

        Args:
            out_dir: The run directory; nothing is written when omitted.

        Returns:
            AdaptationRun: The trained run.

        Raises:
            NonFiniteLossError: If a loss term diverges. The last written
                checkpoint is kept.
            CheckFailedError: If the classifier parameters changed.
        """
        run, cfg = self.run, self.config
        loader_a = seeded_loader(
            self.source_images, batch_size=cfg.batch_size, seed=cfg.seed
        )
        loader_b = seeded_loader(
            self.target_images, batch_size=cfg.batch_size, seed=cfg.seed + 1
        )
        steps_per_epoch = min(len(loader_a), len(loader_b))
        logger.info(
            "Adapting %s -> %s: %d epochs of %d steps",
            run.target,
            run.source,
            cfg.epochs,
            steps_per_epoch,
        )

        for module in run.modules().values():
            module.train()
        epoch_totals: list[float] = []
        for epoch in range(cfg.epochs):
            epoch_totals = []
            batches = zip(loader_a, loader_b, strict=False)
            for i, ((a_batch,), (b_batch,)) in enumerate(batches):
                lr = lr_at(cfg, epoch + i / steps_per_epoch)
                _set_lr(self.opt_d, lr)
                _set_lr(self.opt_g, lr)
                try:
                    breakdown = self.train_step(a_batch, b_batch)
                except NonFiniteLossError as e:
                    logger.error(
                        "Adaptation %s diverged at step %d: %s", run.target, run.step, e
                    )
                    raise
                epoch_totals.append(breakdown.total)
                if run.step % cfg.checkpoint_every == 0:
                    self._emit(breakdown, lr, out_dir)
                run.step += 1
            logger.debug(
                "Epoch %d/%d of %s: mean total %.4f",
                epoch + 1,
                cfg.epochs,
                run.target,
                float(np.mean(epoch_totals)),
            )

        run.oscillation = float(np.std(epoch_totals))
        logger.info(
            "Adaptation %s finished after %d steps, last-epoch loss std %.4f",
            run.target,
            run.step,
            run.oscillation,
        )
        if parameter_hash(run.classifier) != run.classifier_hash:
            msg = f"Classifier parameters changed during adaptation of {run.target}"
            raise CheckFailedError(msg)
        if out_dir is not None:
            save_run(run, out_dir)
        return run

    def _emit(self, breakdown: LossBreakdown, lr: float, out_dir: Path | None) -> None:
        run = self.run
        name = f"step_{run.step:06d}"
        grid = out_dir / MONITOR_DIR / f"{name}.png" if out_dir else None
        snapshot = monitor_snapshot(run, self.monitor_images, grid)
        run.monitors.append(snapshot)
        run.losses.append(
            breakdown.as_row(run.step, lr) | {"divergence": snapshot.divergence}
        )
        logger.info(
            "Step %d: total %.4f (gan_F %.4f, gan_G %.4f, cyc %.4f, idt %.4f), "
            "divergence %.4f",
            run.step,
            breakdown.total,
            breakdown.gan_F,
            breakdown.gan_G,
            breakdown.cyc,
            breakdown.idt,
            snapshot.divergence,
        )
        if out_dir is not None:
            checkpoint = run.checkpoint()
            checkpoint.step = run.step + 1
            save_checkpoint(out_dir / CHECKPOINT_DIR / f"{name}.pt", checkpoint)
            _write_losses(run.losses, out_dir / LOSSES_FILE)


def monitor_snapshot(
    run: AdaptationRun, fixed_images: torch.Tensor, path: Path | None = None
) -> MonitorSnapshot:
    """Transform the fixed monitor images with G and measure their divergence.

    The divergence is the L1 distance between the mean source-train histogram and
    the mean histogram of the transformed images.
    """
    return generator_snapshot(
        run.g,
        fixed_images,
        run.source_histogram,
        run.feature_config.bins,
        run.step,
        path,
    )


def train_adaptation(  # noqa: PLR0913
    manifest: Manifest,
    source: DomainId,
    target: DomainId,
    classifier: Classifier,
    config: TrainConfig,
    *,
    generator: GeneratorConfig | None = None,
    discriminator: DiscriminatorConfig | None = None,
    features: FeatureConfig | None = None,
    stats: FeatureStats | None = None,
    out_dir: Path | None = None,
) -> AdaptationRun:
    """Learn the target-to-source transformation G for one target brand.

    Only train images are used, and no grade of any record is read.

    Args:
        manifest: The dataset.
        source: The labeled source brand.
        target: The unlabeled target brand.
        classifier: The trained source classifier.
        config: Training hyperparameters.
        generator: Generator architecture.
        discriminator: Discriminator architecture.
        features: Camera feature layout.
        stats: Frozen feature statistics; computed from the source train images
            when omitted.
        out_dir: The run directory.

    Returns:
        AdaptationRun: The trained run.

    Raises:
        ConfigError: If source and target are the same brand.
        EmptyDatasetError: If either brand has no train images.
    """
    if source == target:
        msg = f"Source and target brand are both {source!r}"
        raise ConfigError(msg)
    phase = f"adapt:{target}"
    size = config.image_size
    source_images = load_images(
        manifest, manifest.select(source, Split.train), size, phase=phase
    )
    target_images = load_images(
        manifest, manifest.select(target, Split.train), size, phase=phase
    )
    trainer = AdaptationTrainer(
        source,
        target,
        source_images,
        target_images,
        classifier,
        config,
        generator=generator,
        discriminator=discriminator,
        features=features,
        stats=stats,
    )
    return trainer.fit(out_dir)


def adapt_and_classify(
    run: AdaptationRun, images: torch.Tensor
) -> tuple[torch.Tensor, ClassifierOutput]:
    """Map target images towards the source brand with G and classify them.

    Args:
        run: A trained run.
        images: Target-brand images of shape (N, 3, S, S).

    Returns:
        tuple[torch.Tensor, ClassifierOutput]: The transformed images and the
            classifier output on them.
    """
    dtype = next(run.classifier.parameters()).dtype
    with torch.no_grad():
        transformed, _ = transform(run.g, images.to(dtype))
    return transformed, classify(run.classifier, transformed)


def _write_losses(rows: list[dict[str, float | int]], path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        msg = f"Cannot write losses {path}: {e}"
        raise DatasetIOError(msg) from e


def save_run(run: AdaptationRun, out_dir: Path) -> None:
    """Write ``run.json``, the final checkpoint and ``losses.csv`` of a run.

    Raises:
        DatasetIOError: If the directory cannot be written.
    """
    save_checkpoint(out_dir / CHECKPOINT_DIR / FINAL_CHECKPOINT, run.checkpoint())
    _write_losses(run.losses, out_dir / LOSSES_FILE)
    try:
        (out_dir / RUN_FILE).write_text(
            run.record().model_dump_json(indent=2) + "\n", encoding="utf-8"
        )
    except OSError as e:
        msg = f"Cannot write run record in {out_dir}: {e}"
        raise DatasetIOError(msg) from e
    logger.info("Saved adaptation run %s -> %s to %s", run.target, run.source, out_dir)


def load_run(run_dir: Path, classifier: Classifier) -> AdaptationRun:
    """Rebuild a saved run around the classifier it was trained with.

    Args:
        run_dir: The run directory.
        classifier: The source classifier.

    Returns:
        AdaptationRun: The run with its final networks in eval mode.

    Raises:
        DatasetIOError: If the run files cannot be read.
        ArtifactMismatchError: If the files are invalid or the run was trained
            with a different classifier.
    """
    try:
        record = RunRecord.model_validate(
            json.loads((run_dir / RUN_FILE).read_text(encoding="utf-8"))
        )
    except OSError as e:
        msg = f"Cannot read run record in {run_dir}: {e}"
        raise DatasetIOError(msg) from e
    except (ValueError, ValidationError) as e:
        msg = f"Invalid run record in {run_dir}: {e}"
        raise ArtifactMismatchError(msg) from e
    if parameter_hash(classifier) != record.classifier_hash:
        msg = f"Run {run_dir} was trained with a different classifier"
        raise ArtifactMismatchError(msg)

    checkpoint = load_checkpoint(
        run_dir / CHECKPOINT_DIR / FINAL_CHECKPOINT, kind="adaptation"
    )
    tensors = checkpoint.tensors
    dtype = next(classifier.parameters()).dtype
    stats = FeatureStats(mean=tensors["stats_mean"], std=tensors["stats_std"])
    width = record.features.width(classifier.feature_dim)
    run = AdaptationRun(
        source=record.source,
        target=record.target,
        f=ResidualGenerator(record.generator).to(dtype),
        g=ResidualGenerator(record.generator).to(dtype),
        d_a=Discriminator(width, record.discriminator).to(dtype),
        d_b=Discriminator(width, record.discriminator).to(dtype),
        classifier=classifier,
        feature_config=record.features,
        stats=stats,
        config=record.train,
        source_histogram=tensors["source_histogram"],
        classifier_hash=record.classifier_hash,
        step=record.step,
        monitors=[MonitorSnapshot(s, d) for s, d in sorted(record.divergences.items())],
        oscillation=record.oscillation,
    )
    for name, module in run.modules().items():
        checkpoint.load_into(name, module)
        module.eval()
    losses = run_dir / LOSSES_FILE
    if losses.exists():
        run.losses = pd.read_csv(losses).to_dict("records")
    return run


class AdaptationRegistry:
    """Trained target-to-source transformations of one classifier by target brand.

    Examples:
        >>> registry = AdaptationRegistry.load(study_dir / "adapt", classifier)
        >>> images, output = registry.adapt_and_classify("C", target_images)
    """

    def __init__(self, classifier: Classifier) -> None:
        """Initialize an empty registry for a classifier."""
        self.classifier = classifier
        self._classifier_hash = parameter_hash(classifier)
        self._runs: dict[DomainId, AdaptationRun] = {}

    @classmethod
    def load(cls, root: Path, classifier: Classifier) -> "AdaptationRegistry":
        """Load every run directory directly below ``root``."""
        registry = cls(classifier)
        if root.is_dir():
            for run_dir in sorted(root.iterdir()):
                if (run_dir / RUN_FILE).exists():
                    registry.register(load_run(run_dir, classifier))
        return registry

    def register(self, run: AdaptationRun) -> None:
        """Add a run, replacing any earlier run of the same target brand.

        Raises:
            ArtifactMismatchError: If the run belongs to another classifier.
        """
        if run.classifier_hash != self._classifier_hash:
            msg = f"Run for {run.target!r} was trained with a different classifier"
            raise ArtifactMismatchError(msg)
        self._runs[run.target] = run

    @property
    def brands(self) -> list[DomainId]:
        """Registered target brands in sorted order."""
        return sorted(self._runs)

    def __contains__(self, brand: object) -> bool:
        """Whether a brand has a registered transformation."""
        return brand in self._runs

    def __len__(self) -> int:
        """Number of registered brands."""
        return len(self._runs)

    def __getitem__(self, brand: DomainId) -> AdaptationRun:
        """Return the run of a target brand.

        Raises:
            UnknownBrandError: If no run is registered for the brand.
        """
        try:
            return self._runs[brand]
        except KeyError as e:
            msg = f"No adaptation registered for brand {brand!r}"
            raise UnknownBrandError(msg) from e

    def adapt_and_classify(
        self, brand: DomainId, images: torch.Tensor
    ) -> tuple[torch.Tensor, ClassifierOutput]:
        """Transform images of a brand with its G and classify them."""
        return adapt_and_classify(self[brand], images)


def load_generator(path: Path, name: str = "G") -> ResidualGenerator:
    """Restore one generator of an adaptation checkpoint in eval mode.

    Args:
        path: A checkpoint file or a run directory, whose final checkpoint is used.
        name: ``G`` for the target-to-source transformation, ``F`` for its inverse.

    Returns:
        ResidualGenerator: The generator.

    Raises:
        DatasetIOError: If the checkpoint cannot be read.
        ArtifactMismatchError: If the checkpoint is not an adaptation checkpoint.
    """
    if path.is_dir():
        path = path / CHECKPOINT_DIR / FINAL_CHECKPOINT
    checkpoint = load_checkpoint(path, kind="adaptation")
    try:
        record = RunRecord.model_validate(checkpoint.config)
    except ValidationError as e:
        msg = f"Adaptation checkpoint {path} has an invalid config: {e}"
        raise ArtifactMismatchError(msg) from e
    gen = ResidualGenerator(record.generator)
    checkpoint.load_into(name, gen)
    return gen.eval()
