"""Supervised training of the source-domain classifier."""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import pandas as pd
import torch
from torch.nn import functional as F

from camadapt.manifest import Manifest
from camadapt.models.checkpoint import save_classifier
from camadapt.models.classifier import Classifier, ClassifierConfig
from camadapt.training.config import TrainConfig, lr_at
from camadapt.training.data import load_images, load_labels, seeded_loader
from camadapt.types import DatasetIOError, DomainId, EmptyDatasetError, Split

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class EpochStats:
    """Mean loss and accuracy over one training epoch."""

    epoch: int
    loss: float
    accuracy: float
    lr: float


class ClassifierTrainer:
    """Trains a classifier with cross-entropy on one brand's train split.

    Only source-brand train images are ever loaded; their ids are recorded in the
    active audit under the ``classifier`` phase.
    """

    def __init__(
        self,
        manifest: Manifest,
        source: DomainId,
        config: TrainConfig,
        arch: ClassifierConfig | None = None,
    ) -> None:
        """Initialize the trainer.

        Args:
            manifest: The dataset.
            source: The labeled source brand.
            config: Training hyperparameters.
            arch: The classifier architecture; by default the small CNN sized for
                the manifest task and ``config.image_size``.
        """
        self.manifest = manifest
        self.source = source
        self.config = config
        self.arch = arch or ClassifierConfig(
            num_classes=manifest.task.num_classes, image_size=config.image_size
        )
        self.history: list[EpochStats] = []

    def train(
        self, out_dir: Path | None = None, provenance: str | None = None
    ) -> Classifier:
        """Run the training loop.

        Args:
            out_dir: When given, receives ``classifier.pt`` and ``losses.csv``.
            provenance: Stamped into the final checkpoint only, so interrupted
                runs never look complete.

        Returns:
            Classifier: The trained classifier in eval mode.

        Raises:
            EmptyDatasetError: If the source brand has no train records.
        """
        records = self.manifest.select(self.source, Split.train)
        if not records:
            msg = f"Brand {self.source!r} has no train records"
            raise EmptyDatasetError(msg)
        cfg = self.config
        images = load_images(
            self.manifest, records, self.arch.image_size, phase="classifier"
        )
        labels = load_labels(records)
        loader = seeded_loader(
            images, labels, batch_size=cfg.batch_size, seed=cfg.seed
        )

        model = Classifier(self.arch, seed=cfg.seed)
        optimizer = torch.optim.Adam(
            model.parameters(), lr=cfg.lr_start, betas=(cfg.beta1, cfg.beta2)
        )
        steps_per_epoch = len(loader)
        step = 0
        logger.info(
            "Training classifier on %d %s images for %d epochs",
            len(records),
            self.source,
            cfg.epochs,
        )

        model.train()
        for epoch in range(cfg.epochs):
            total_loss, correct, seen = 0.0, 0, 0
            lr = cfg.lr_start
            for i, (x, y) in enumerate(loader):
                lr = lr_at(cfg, epoch + i / steps_per_epoch)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                logits = model(x)
                loss = F.cross_entropy(logits, y)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                step += 1
                if out_dir is not None and step % cfg.checkpoint_every == 0:
                    save_classifier(out_dir / "classifier.pt", model, step)

                total_loss += float(loss) * len(y)
                correct += int((logits.argmax(dim=1) == y).sum())
                seen += len(y)
            stats = EpochStats(epoch, total_loss / seen, correct / seen, lr)
            self.history.append(stats)
            logger.info(
                "Epoch %d/%d: loss %.4f, accuracy %.3f, lr %.2e",
                epoch + 1,
                cfg.epochs,
                stats.loss,
                stats.accuracy,
                lr,
            )

        model.eval()
        if out_dir is not None:
            save_classifier(out_dir / "classifier.pt", model, step, provenance)
            self._write_history(out_dir / "losses.csv")
        return model

    def _write_history(self, path: Path) -> None:
        frame = pd.DataFrame([asdict(s) for s in self.history])
        try:
            frame.to_csv(path, index=False, lineterminator="\n")
        except OSError as e:
            msg = f"Cannot write training history {path}: {e}"
            raise DatasetIOError(msg) from e


def train_classifier(
    manifest: Manifest,
    source: DomainId,
    config: TrainConfig,
    arch: ClassifierConfig | None = None,
    *,
    out_dir: Path | None = None,
    provenance: str | None = None,
) -> Classifier:
    """Train a classifier on the source brand's labeled train split.

    See `ClassifierTrainer`.
    """
    return ClassifierTrainer(manifest, source, config, arch).train(out_dir, provenance)