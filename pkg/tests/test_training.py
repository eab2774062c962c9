from pathlib import Path

import pandas as pd
import pytest
import torch

from camadapt.features import normalized_color_histogram
from camadapt.imaging.filters import BrandFilterParams, apply_brand_filter
from camadapt.imaging.preprocess import to_tensor
from camadapt.imaging.synth import (
    SynthDatasetConfig,
    build_synth_dataset,
    default_benchmark_config,
    generate_synthetic_fundus,
)
from camadapt.manifest import Manifest
from camadapt.models.checkpoint import load_checkpoint, parameter_hash
from camadapt.models.classifier import Classifier
from camadapt.models.generator import transform
from camadapt.training.adaptation import (
    AdaptationRegistry,
    AdaptationRun,
    AdaptationTrainer,
    adapt_and_classify,
    compute_feature_stats,
    load_generator,
    load_run,
    train_adaptation,
)
from camadapt.training.classifier import ClassifierTrainer, train_classifier
from camadapt.training.config import TrainConfig, classifier_train_config, lr_at
from camadapt.training.monitor import (
    histogram_divergence,
    monitor_grid,
    residue_heatmap,
)
from camadapt.types import (
    ArtifactMismatchError,
    CheckFailedError,
    ConfigError,
    NonFiniteLossError,
    Split,
    UnknownBrandError,
)
from camadapt.utils.audit import Audit
from tests.utils.tiny import (
    tiny_classifier_config,
    tiny_discriminator_config,
    tiny_generator_config,
    tiny_train_config,
)


def _trainer(
    classifier: Classifier, images: torch.Tensor, **overrides: object
) -> AdaptationTrainer:
    return AdaptationTrainer(
        "A",
        "B",
        images[:4],
        (images[4:] * 1.2).clamp(0.0, 1.0),
        classifier,
        tiny_train_config(**overrides),
        generator=tiny_generator_config(),
        discriminator=tiny_discriminator_config(),
    )


def _adapt(
    manifest: Manifest, classifier: Classifier, out_dir: Path | None, epochs: int = 2
) -> AdaptationRun:
    return train_adaptation(
        manifest,
        "A",
        "B",
        classifier,
        tiny_train_config(epochs=epochs),
        generator=tiny_generator_config(),
        discriminator=tiny_discriminator_config(),
        out_dir=out_dir,
    )


def test_lr_schedule_endpoints() -> None:
    """The rate decays linearly from 1e-4 to exactly 1e-5."""
    config = TrainConfig()
    assert lr_at(config, 0) == 1e-4
    assert lr_at(config, 200) == 1e-5
    assert lr_at(config, 100) == pytest.approx(5.5e-5)


def test_lr_schedule_rejects_out_of_range_epochs() -> None:
    """Epochs outside [0, epochs] are errors."""
    config = TrainConfig()
    with pytest.raises(ValueError, match="outside"):
        lr_at(config, -1)
    with pytest.raises(ValueError, match="outside"):
        lr_at(config, 201)


def test_schedule_must_decay() -> None:
    """A schedule that grows is rejected."""
    with pytest.raises(ValueError, match="lr_start"):
        TrainConfig(lr_start=1e-5, lr_end=1e-4)


def test_classifier_training(
    tmp_path: Path, tiny_dataset: Manifest, audit: Audit
) -> None:
    """Training writes a checkpoint and history from source train images only."""
    config = classifier_train_config(epochs=2, batch_size=4, image_size=16)
    model = train_classifier(
        tiny_dataset, "A", config, tiny_classifier_config(), out_dir=tmp_path
    )
    assert not model.training
    assert load_checkpoint(tmp_path / "classifier.pt", "classifier").step == 2
    history = pd.read_csv(tmp_path / "losses.csv")
    assert list(history["epoch"]) == [0, 1]

    train_ids = {r.image_id for r in tiny_dataset.select("A", Split.train)}
    assert audit.consumed == {"classifier": train_ids}
    assert audit.reads_of("B") == 0
    assert audit.reads_of("A") > 0


def test_classifier_training_is_deterministic(tiny_dataset: Manifest) -> None:
    """The same seed trains bitwise identical weights."""
    config = classifier_train_config(epochs=1, batch_size=4, image_size=16)
    a = train_classifier(tiny_dataset, "A", config, tiny_classifier_config())
    b = train_classifier(tiny_dataset, "A", config, tiny_classifier_config())
    assert parameter_hash(a) == parameter_hash(b)


def test_trainer_seeds_every_network(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """F, G, D_A and D_B are initialized from distinct seeds."""
    run = _trainer(classifier, random_images).run
    assert parameter_hash(run.f) != parameter_hash(run.g)
    assert parameter_hash(run.d_a) != parameter_hash(run.d_b)
    again = _trainer(classifier, random_images).run
    assert parameter_hash(again.d_b) == parameter_hash(run.d_b)


def test_discriminator_step_ascends(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """One discriminator step raises gan_F + gan_G and leaves generators alone."""
    trainer = _trainer(classifier, random_images)
    run = trainer.run
    a, b = trainer.source_images, trainer.target_images
    generators = (parameter_hash(run.f), parameter_hash(run.g))

    before_f, before_g = trainer.d_step(a, b)
    with torch.no_grad():
        after_f, after_g = trainer.gan_terms(a, b, "hard")
    assert float(after_f + after_g) > before_f + before_g
    assert (parameter_hash(run.f), parameter_hash(run.g)) == generators


def test_generator_step_descends(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """One generator step lowers the objective and leaves discriminators alone."""
    trainer = _trainer(classifier, random_images)
    run = trainer.run
    a, b = trainer.source_images, trainer.target_images
    discriminators = (parameter_hash(run.d_a), parameter_hash(run.d_b))

    before = trainer.g_step(a, b)
    _, after = trainer.objective(a, b)
    assert after.total < before.total
    assert (parameter_hash(run.d_a), parameter_hash(run.d_b)) == discriminators
    assert all(p.requires_grad for p in run.d_a.parameters())


def test_training_never_changes_the_classifier(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """Neither step moves or accumulates gradients into the classifier."""
    before = parameter_hash(classifier)
    trainer = _trainer(classifier, random_images)
    a, b = trainer.source_images, trainer.target_images
    trainer.d_step(a, b)
    trainer.g_step(a, b)
    assert parameter_hash(classifier) == before
    assert all(p.grad is None for p in classifier.parameters())
    assert not any(p.requires_grad for p in classifier.parameters())


def test_diverged_step_restores_discriminators(
    classifier: Classifier, random_images: torch.Tensor, monkeypatch: pytest.MonkeyPatch
) -> None:
    """A non-finite generator term rolls the discriminator update back."""
    trainer = _trainer(classifier, random_images)
    run = trainer.run
    a, b = trainer.source_images, trainer.target_images
    trainer.train_step(a, b)
    before = (parameter_hash(run.d_a), parameter_hash(run.d_b))
    moments = [state["exp_avg"].clone() for state in trainer.opt_d.state.values()]

    def diverge(*_: torch.Tensor) -> None:
        raise NonFiniteLossError("cyc", float("nan"))

    monkeypatch.setattr(trainer, "g_step", diverge)
    with pytest.raises(NonFiniteLossError, match="cyc"):
        trainer.train_step(a, b)

    assert (parameter_hash(run.d_a), parameter_hash(run.d_b)) == before
    restored = [state["exp_avg"] for state in trainer.opt_d.state.values()]
    assert all(torch.equal(x, y) for x, y in zip(moments, restored, strict=True))


def test_null_adaptation_keeps_residue_small(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """Adapting a brand that already looks like the source barely moves pixels."""
    source = random_images[:4]
    trainer = AdaptationTrainer(
        "A",
        "B",
        source,
        source.clone(),
        classifier,
        tiny_train_config(epochs=3),
        generator=tiny_generator_config(),
        discriminator=tiny_discriminator_config(),
    )
    run = trainer.fit()
    with torch.no_grad():
        _, residue = transform(run.g, random_images[4:])
    assert run.step == 3
    assert float(residue.abs().mean()) < 0.05


def test_changed_classifier_fails_the_run(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """A classifier modified during training fails the end-of-run check."""
    trainer = _trainer(classifier, random_images)
    with torch.no_grad():
        classifier.head.bias.add_(1.0)
    with pytest.raises(CheckFailedError, match="Classifier parameters changed"):
        trainer.fit()


def test_adaptation_rejects_mismatched_sizes(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """Train, generator and classifier resolutions must agree."""
    with pytest.raises(ConfigError, match="image sizes differ"):
        _trainer(classifier, random_images, image_size=32)


def test_adaptation_rejects_same_brand(
    tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """Adapting a brand to itself is a configuration error."""
    with pytest.raises(ConfigError, match="both"):
        train_adaptation(tiny_dataset, "A", "A", classifier, tiny_train_config())


def test_adaptation_run_files(
    tmp_path: Path, tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """A two-step run writes periodic and final checkpoints, losses and grids."""
    run = _adapt(tiny_dataset, classifier, tmp_path)

    assert run.step == 2
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["final.pt", "step_000000.pt", "step_000001.pt"]
    assert load_checkpoint(tmp_path / "checkpoints" / "step_000000.pt").step == 1
    monitors = sorted(p.name for p in (tmp_path / "monitors").iterdir())
    assert monitors == ["step_000000.png", "step_000001.png"]
    assert (tmp_path / "run.json").exists()

    losses = pd.read_csv(tmp_path / "losses.csv")
    assert list(losses["step"]) == [0, 1]
    assert {"gan_F", "gan_G", "cyc", "idt", "total", "divergence"} <= set(
        losses.columns
    )
    assert run.oscillation is not None


def test_adaptation_starts_at_identity(
    tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """Fresh generators have zero cycle and identity loss at step 0."""
    run = _adapt(tiny_dataset, classifier, None, epochs=1)
    first = run.losses[0]
    assert first["cyc"] == 0.0
    assert first["idt"] == 0.0


def test_adaptation_audit(
    tiny_dataset: Manifest, classifier: Classifier, audit: Audit
) -> None:
    """Adaptation reads no grades and consumes only train images of both brands."""
    _adapt(tiny_dataset, classifier, None, epochs=1)
    assert audit.grade_reads == {}
    expected = {
        r.image_id
        for brand in ("A", "B")
        for r in tiny_dataset.select(brand, Split.train)
    }
    assert audit.consumed == {"adapt:B": expected}


def test_saved_run_reloads(
    tmp_path: Path, tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """load_run and load_generator reproduce the trained G."""
    run = _adapt(tiny_dataset, classifier, tmp_path, epochs=1)
    images = torch.rand(2, 3, 16, 16, dtype=torch.float64)
    with torch.no_grad():
        expected = run.g(images)
        loaded = load_run(tmp_path, classifier)
        assert (loaded.g(images) - expected).abs().max() < 1e-6
        assert loaded.step == run.step
        gen = load_generator(tmp_path)
        assert (gen(images.float()).double() - expected).abs().max() < 1e-5
    assert torch.equal(loaded.stats.mean, run.stats.mean)


def test_saved_run_needs_its_classifier(
    tmp_path: Path, tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """A run cannot be loaded around another classifier."""
    _adapt(tiny_dataset, classifier, tmp_path, epochs=1)
    other = Classifier(tiny_classifier_config(), seed=9).to(torch.float64)
    with pytest.raises(ArtifactMismatchError, match="different classifier"):
        load_run(tmp_path, other)


def test_registry(
    tmp_path: Path, tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """The registry serves each target brand's G and guards its classifier."""
    run = _adapt(tiny_dataset, classifier, tmp_path / "B", epochs=1)
    registry = AdaptationRegistry.load(tmp_path, classifier)
    assert registry.brands == ["B"]
    assert "B" in registry
    assert len(registry) == 1

    images = torch.rand(3, 3, 16, 16, dtype=torch.float64)
    transformed, output = registry.adapt_and_classify("B", images)
    direct, direct_output = adapt_and_classify(run, images)
    assert torch.allclose(transformed, direct)
    assert torch.equal(output.labels, direct_output.labels)

    with pytest.raises(UnknownBrandError):
        _ = registry["C"]
    other = AdaptationRegistry(Classifier(tiny_classifier_config(), seed=9))
    with pytest.raises(ArtifactMismatchError):
        other.register(run)


def test_compute_feature_stats_reads_no_grades(
    tiny_dataset: Manifest, classifier: Classifier, audit: Audit
) -> None:
    """Feature statistics use source train images only and no labels."""
    stats = compute_feature_stats(tiny_dataset, "A", classifier)
    assert stats.width == 3 + 48 + 8
    assert audit.grade_reads == {}
    assert audit.consumed["feature-stats"] == {
        r.image_id for r in tiny_dataset.select("A", Split.train)
    }


def test_monitor_grid_layout() -> None:
    """Originals fill the top row and their transformations the bottom row."""
    before = torch.rand(2, 3, 16, 16)
    after = torch.rand(2, 3, 16, 16)
    grid = monitor_grid(before, after)
    assert grid.shape == (3, 38, 38)
    assert torch.equal(grid[:, 2:18, 2:18], before[0])
    assert torch.equal(grid[:, 2:18, 20:36], before[1])
    assert torch.equal(grid[:, 20:36, 2:18], after[0])
    assert torch.equal(grid[:, 20:36, 20:36], after[1])


def test_residue_heatmap() -> None:
    """Residues in [-1, 1] map linearly onto [0, 1]."""
    heat = residue_heatmap(torch.tensor([-1.0, 0.0, 1.0]))
    assert heat.tolist() == [0.0, 0.5, 1.0]


def test_histogram_divergence_of_filtered_images() -> None:
    """A color filter gives a positive divergence, the same images give zero."""
    base = [generate_synthetic_fundus(seed, 1, 16)[0] for seed in range(4)]
    params = BrandFilterParams(channel_gains=(1.3, 1.0, 0.7))
    images = to_tensor(base, torch.float64)
    filtered = to_tensor([apply_brand_filter(x, params) for x in base], torch.float64)
    reference = normalized_color_histogram(images, 16).mean(dim=0)
    assert histogram_divergence(reference, images.clone(), 16) == 0.0
    assert histogram_divergence(reference, filtered, 16) > 0.0


def test_histogram_divergence_of_reference() -> None:
    """Images whose mean histogram is the reference have divergence zero."""
    images = torch.rand(4, 3, 8, 8, dtype=torch.float64)
    reference = normalized_color_histogram(images, 16).mean(dim=0)
    assert histogram_divergence(reference, images, 16) == 0.0
    assert histogram_divergence(reference, torch.zeros(1, 3, 8, 8), 16) > 0.0


@pytest.mark.benchmark
def test_classifier_learns_synthetic_source(tmp_path: Path) -> None:
    """100 source images per grade at 64x64 are learned to over 0.9 accuracy."""
    benchmark = default_benchmark_config()
    config = SynthDatasetConfig(
        filters={brand: benchmark.filters[brand] for brand in ("A", "B")},
        source="A",
        train_counts=dict.fromkeys(range(5), 100),
        image_size=64,
        task=benchmark.task,
    )
    manifest = build_synth_dataset(config, tmp_path)
    trainer = ClassifierTrainer(manifest, "A", classifier_train_config())
    trainer.train()
    assert len(trainer.history) == 30
    assert trainer.history[-1].accuracy > 0.9
