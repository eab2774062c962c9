from pathlib import Path

import pytest
import torch
from torch import nn

from camadapt.models.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_classifier,
    parameter_hash,
    save_checkpoint,
    save_classifier,
)
from camadapt.models.classifier import Classifier, ClassifierConfig, classify, predict
from camadapt.models.discriminator import (
    Discriminator,
    DiscriminatorConfig,
    discriminate,
)
from camadapt.models.generator import (
    GeneratorConfig,
    InstanceNorm,
    ResidualGenerator,
    generator_forward,
    transform,
)
from camadapt.types import (
    ArtifactMismatchError,
    CameraFeatureVector,
    DatasetIOError,
    ShapeMismatchError,
)
from tests.utils.tiny import tiny_classifier_config, tiny_generator_config


def _perturbed_generator(size: int) -> ResidualGenerator:
    gen = ResidualGenerator(
        GeneratorConfig(base_width=4, residual_blocks=1, image_size=size), seed=3
    ).to(torch.float64)
    generator = torch.Generator().manual_seed(4)
    with torch.no_grad():
        gen.head.weight.copy_(
            torch.randn(gen.head.weight.shape, generator=generator) * 0.1
        )
    return gen


def test_fresh_generator_is_identity(random_images: torch.Tensor) -> None:
    """A zero-initialized head emits an all-zero residue."""
    gen = ResidualGenerator(tiny_generator_config()).to(torch.float64)
    residue = generator_forward(gen, random_images)
    assert torch.equal(residue, torch.zeros_like(random_images))
    out, _ = transform(gen, random_images)
    assert torch.equal(out, random_images)


def test_generator_output_shape() -> None:
    """A 64x64 batch comes back at 64x64 with values in [-1, 1]."""
    gen = _perturbed_generator(64)
    residue = gen(torch.rand(2, 3, 64, 64, dtype=torch.float64))
    assert residue.shape == (2, 3, 64, 64)
    assert residue.abs().max() <= 1.0


def test_transform_arithmetic() -> None:
    """The transform adds the residue and clamps into [0, 1]."""
    image = torch.tensor([0.5, 0.9]).reshape(1, 2, 1, 1)
    out, _ = transform(lambda x: torch.full_like(x, -0.2), image)
    assert out.flatten().tolist() == pytest.approx([0.3, 0.7])
    out, residue = transform(lambda x: torch.full_like(x, 0.5), image)
    assert out.flatten().tolist() == [1.0, 1.0]
    assert residue.flatten().tolist() == [0.5, 0.5]


@pytest.mark.parametrize("shape", [(1, 3, 24, 24), (1, 1, 16, 16), (3, 16, 16)])
def test_generator_rejects_bad_shapes(shape: tuple[int, ...]) -> None:
    """Inputs must be 3-channel batches with sides divisible by 16."""
    gen = ResidualGenerator(tiny_generator_config())
    with pytest.raises(ShapeMismatchError):
        gen(torch.zeros(shape))


def test_generator_config_size() -> None:
    """Training sizes must be multiples of 16."""
    with pytest.raises(ValueError, match="not divisible"):
        GeneratorConfig(image_size=40)


def test_instance_norm_accepts_single_pixel_maps() -> None:
    """1x1 maps normalize to zero instead of raising."""
    out = InstanceNorm()(torch.randn(2, 4, 1, 1))
    assert torch.equal(out, torch.zeros(2, 4, 1, 1))
    x = torch.randn(2, 4, 8, 8, dtype=torch.float64)
    normed = InstanceNorm()(x)
    assert normed.mean(dim=(2, 3)).abs().max() < 1e-9


def test_generator_gradient_matches_finite_difference() -> None:
    """The input gradient of a 32x32 generator matches central differences."""
    gen = _perturbed_generator(32)
    x = torch.rand(1, 3, 32, 32, dtype=torch.float64, generator=torch.Generator())
    x.requires_grad_(True)
    gen(x).sum().backward()
    assert x.grad is not None
    analytic = float(x.grad[0, 1, 10, 12])

    h = 1e-6
    with torch.no_grad():
        plus = x.detach().clone()
        plus[0, 1, 10, 12] += h
        minus = x.detach().clone()
        minus[0, 1, 10, 12] -= h
        numeric = (float(gen(plus).sum()) - float(gen(minus).sum())) / (2 * h)
    assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(numeric))


def test_generator_seed_is_reproducible() -> None:
    """Equal seeds give equal weights; different seeds do not."""
    config = tiny_generator_config()
    a = ResidualGenerator(config, seed=1)
    b = ResidualGenerator(config, seed=1)
    c = ResidualGenerator(config, seed=2)
    assert parameter_hash(a) == parameter_hash(b)
    assert parameter_hash(a) != parameter_hash(c)


def test_zero_discriminator_is_undecided() -> None:
    """All-zero weights score every input 0.5."""
    d = Discriminator(5, DiscriminatorConfig(hidden=4))
    for p in d.parameters():
        nn.init.zeros_(p)
    scores = d(torch.randn(3, 5))
    assert scores.tolist() == [0.5, 0.5, 0.5]


def test_discriminator_is_deterministic() -> None:
    """The same seed and input give the same scores, in (0, 1)."""
    features = torch.randn(4, 6)
    a = Discriminator(6, seed=5)(features)
    b = Discriminator(6, seed=5)(features)
    assert torch.equal(a, b)
    assert ((a > 0) & (a < 1)).all()


def test_discriminator_gradient_matches_finite_difference() -> None:
    """The input gradient of a discriminator matches central differences."""
    d = Discriminator(6, DiscriminatorConfig(hidden=8), seed=2).to(torch.float64)
    with torch.no_grad():
        d.fc1.weight.mul_(50.0)
        d.fc2.weight.mul_(50.0)
    x = torch.randn(1, 6, dtype=torch.float64, generator=torch.Generator())
    x.requires_grad_(True)
    d(x).sum().backward()
    assert x.grad is not None

    h = 1e-6
    for i in range(6):
        with torch.no_grad():
            step = torch.zeros_like(x)
            step[0, i] = h
            numeric = (float(d(x + step)) - float(d(x - step))) / (2 * h)
        assert abs(float(x.grad[0, i]) - numeric) < 1e-6


def test_discriminator_checks_width() -> None:
    """A feature vector of the wrong width is rejected."""
    d = Discriminator(6)
    with pytest.raises(ShapeMismatchError, match="width"):
        d(torch.zeros(2, 7))


def test_discriminator_accepts_feature_vectors() -> None:
    """Camera feature vectors are scored by their concatenated vector."""
    fv = CameraFeatureVector(
        mi=torch.zeros(2, 3),
        hist=torch.zeros(2, 3, 2),
        deep=torch.zeros(2, 4),
        vector=torch.randn(2, 13),
    )
    d = Discriminator(len(fv), seed=0)
    assert torch.equal(discriminate(d, fv), d(fv.vector))


def test_predict_uniform_logits() -> None:
    """Equal logits resolve to class 0 with probability one half."""
    out = predict(torch.zeros(1, 2))
    assert out.labels.tolist() == [0]
    assert out.probabilities.tolist() == [[0.5, 0.5]]


def test_predict_positive_logit() -> None:
    """Logits (0, 3) give label 1 and p1 = 1 / (1 + exp(-3))."""
    out = predict(torch.tensor([[0.0, 3.0]], dtype=torch.float64))
    assert out.labels.tolist() == [1]
    assert float(out.scores[0]) == pytest.approx(0.952574, abs=1e-6)


def test_classifier_checks_resolution(classifier: Classifier) -> None:
    """Images at the wrong resolution are rejected."""
    with pytest.raises(ShapeMismatchError, match="expects"):
        classify(classifier, torch.zeros(1, 3, 32, 32, dtype=torch.float64))


def test_classify_shapes(
    classifier: Classifier, random_images: torch.Tensor
) -> None:
    """Classification returns one label and one probability row per image."""
    out = classify(classifier, random_images)
    assert out.logits.shape == (8, 2)
    assert out.labels.shape == (8,)
    assert torch.allclose(
        out.probabilities.sum(dim=1), torch.ones(8, dtype=torch.float64)
    )


def test_classify_uses_running_statistics() -> None:
    """A training-mode ResNet-50 classifies each image independently of its batch."""
    model = Classifier(ClassifierConfig(arch="resnet50", image_size=32), seed=0)
    model.train()
    norm = next(m for m in model.modules() if isinstance(m, nn.BatchNorm2d))
    running = norm.running_mean.clone()
    generator = torch.Generator().manual_seed(0)
    images = torch.rand(3, 3, 32, 32, generator=generator)

    batch = classify(model, images).logits
    single = classify(model, images[:1]).logits

    assert torch.allclose(batch[:1], single, atol=1e-5)
    assert torch.equal(norm.running_mean, running)
    assert model.training


def test_classifier_round_trip(tmp_path: Path, random_images: torch.Tensor) -> None:
    """A saved classifier reloads with the same outputs."""
    model = Classifier(tiny_classifier_config(), seed=4).eval()
    save_classifier(tmp_path / "cls.pt", model, step=12)
    loaded = load_classifier(tmp_path / "cls.pt", tiny_classifier_config())
    images = random_images.float()
    gap = classify(model, images).logits - classify(loaded, images).logits
    assert gap.abs().max() < 1e-6
    assert parameter_hash(loaded) == parameter_hash(model)
    assert load_checkpoint(tmp_path / "cls.pt").step == 12


def test_classifier_architecture_mismatch(tmp_path: Path) -> None:
    """Loading against another architecture raises."""
    save_classifier(tmp_path / "cls.pt", Classifier(tiny_classifier_config()))
    with pytest.raises(ArtifactMismatchError, match="expected"):
        load_classifier(tmp_path / "cls.pt", ClassifierConfig(image_size=16))


def test_checkpoint_kind_is_checked(tmp_path: Path) -> None:
    """A checkpoint of another kind is rejected."""
    save_checkpoint(
        tmp_path / "run.pt",
        Checkpoint(kind="adaptation", config={}, modules={}),
    )
    with pytest.raises(ArtifactMismatchError, match="adaptation"):
        load_classifier(tmp_path / "run.pt")


def test_checkpoint_missing_and_garbage(tmp_path: Path) -> None:
    """Missing files are I/O errors; foreign files are mismatches."""
    with pytest.raises(DatasetIOError):
        load_checkpoint(tmp_path / "absent.pt")
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(ArtifactMismatchError):
        load_checkpoint(tmp_path / "junk.pt")
    torch.save({"format": "other"}, tmp_path / "other.pt")
    with pytest.raises(ArtifactMismatchError, match="not a"):
        load_checkpoint(tmp_path / "other.pt")


def test_checkpoint_missing_module(tmp_path: Path) -> None:
    """Loading a module the checkpoint does not hold raises."""
    checkpoint = Checkpoint(kind="adaptation", config={}, modules={})
    with pytest.raises(ArtifactMismatchError, match="no module"):
        checkpoint.load_into("G", ResidualGenerator(tiny_generator_config()))


def test_parameter_hash_tracks_values() -> None:
    """Any change to a parameter changes the hash."""
    gen = ResidualGenerator(tiny_generator_config())
    before = parameter_hash(gen)
    with torch.no_grad():
        gen.head.bias[0] += 1e-3
    assert parameter_hash(gen) != before
