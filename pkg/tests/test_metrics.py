import random

import numpy as np
import pytest
import torch
from sklearn.metrics import roc_auc_score

from camadapt.manifest import Manifest
from camadapt.metrics import (
    EXACT_AUC_LIMIT,
    auc,
    evaluate_brand,
    evaluate_matrix,
    metric_for,
    quadratic_weighted_kappa,
    score_output,
)
from camadapt.models.classifier import Classifier, predict
from camadapt.training.adaptation import AdaptationTrainer
from camadapt.types import DegenerateKappaWarning, EmptyDatasetError, EvalResult, Task
from camadapt.utils.audit import Audit
from tests.utils.oracles import auc_oracle, kappa_oracle
from tests.utils.tiny import (
    tiny_discriminator_config,
    tiny_generator_config,
    tiny_train_config,
)


def test_kappa_of_perfect_agreement() -> None:
    """Identical grades have kappa 1."""
    assert quadratic_weighted_kappa([0, 1, 2, 3, 4], [0, 1, 2, 3, 4], 5) == 1.0


def test_kappa_of_chance_agreement() -> None:
    """A confusion matrix equal to its expectation has kappa 0."""
    assert quadratic_weighted_kappa([0, 0, 1, 1], [0, 1, 1, 0], 2) == 0.0


def test_kappa_of_full_reversal() -> None:
    """Swapping the extreme grades gives kappa -1."""
    assert quadratic_weighted_kappa([0, 4], [4, 0], 5) == pytest.approx(-1.0)


def test_kappa_of_constant_grades() -> None:
    """One shared constant has a zero denominator, defined as 1.0 with a warning."""
    with pytest.warns(DegenerateKappaWarning):
        assert quadratic_weighted_kappa([2, 2, 2], [2, 2, 2], 5) == 1.0


def test_kappa_matches_oracle() -> None:
    """1,000 random label/prediction pairs match the explicit-loop formula."""
    rng = random.Random(0)
    for _ in range(1000):
        k = rng.randint(2, 5)
        n = rng.randint(1, 30)
        labels = [rng.randrange(k) for _ in range(n)]
        preds = [rng.randrange(k) for _ in range(n)]
        expected = kappa_oracle(labels, preds, k)
        if expected is None:
            with pytest.warns(DegenerateKappaWarning):
                assert quadratic_weighted_kappa(labels, preds, k) == 1.0
        else:
            assert abs(quadratic_weighted_kappa(labels, preds, k) - expected) < 1e-10


@pytest.mark.parametrize(
    ("labels", "preds", "message"),
    [
        ([0, 1], [0], "labels but"),
        ([], [], "at least one"),
        ([0, 5], [0, 1], "labels must lie"),
        ([0, 1], [0, -1], "preds must lie"),
    ],
)
def test_kappa_rejects_bad_input(
    labels: list[int], preds: list[int], message: str
) -> None:
    """Length mismatches, empty input and out-of-range grades are errors."""
    with pytest.raises(ValueError, match=message):
        quadratic_weighted_kappa(labels, preds, 5)


def test_auc_worked_examples() -> None:
    """Three of four pairs ordered correctly give 0.75; all ties give 0.5."""
    assert auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75
    assert auc([0, 1], [0.5, 0.5]) == 0.5
    assert auc([1, 0], [0.9, 0.1]) == 1.0


def test_auc_matches_oracle() -> None:
    """1,000 random instances with ties match pairwise comparison."""
    rng = random.Random(1)
    for _ in range(1000):
        n = rng.randint(2, 40)
        labels = [0, 1] + [rng.randrange(2) for _ in range(n - 2)]
        scores = [rng.randrange(6) / 5 for _ in range(n)]
        assert abs(auc(labels, scores) - auc_oracle(labels, scores)) < 1e-12


def test_auc_rank_sum_path() -> None:
    """Inputs above the exact-comparison limit use ranks and give the same value."""
    rng = np.random.default_rng(2)
    n = EXACT_AUC_LIMIT + 2000
    labels = rng.integers(0, 2, size=n)
    scores = np.round(rng.uniform(size=n) + 0.3 * labels, 2)
    assert abs(auc(labels, scores) - roc_auc_score(labels, scores)) < 1e-9


@pytest.mark.parametrize(
    ("labels", "scores", "message"),
    [
        ([1, 1], [0.2, 0.3], "at least one positive"),
        ([0, 2], [0.2, 0.3], "0 or 1"),
        ([0, 1], [0.2], "labels but"),
    ],
)
def test_auc_rejects_bad_input(
    labels: list[int], scores: list[float], message: str
) -> None:
    """Single-class input, non-binary labels and length mismatches are errors."""
    with pytest.raises(ValueError, match=message):
        auc(labels, scores)


def test_metric_for_task() -> None:
    """Grading is scored with kappa and referable detection with AUC."""
    assert metric_for(Task.grading5) == "qwk"
    assert metric_for(Task.binary) == "auc"


def test_score_output() -> None:
    """Grading scores argmax labels; binary tasks rank positive probabilities."""
    logits = torch.tensor([[2.0, 0.0], [0.0, 1.0], [0.0, 3.0]])
    output = predict(logits)
    assert score_output(Task.binary, [0, 1, 1], output) == 1.0
    grading = predict(torch.eye(5))
    assert score_output(Task.grading5, [0, 1, 2, 3, 4], grading) == 1.0


def test_eval_result_range() -> None:
    """Metric values outside their range are rejected."""
    with pytest.raises(ValueError, match="outside"):
        EvalResult(brand="A", metric_name="auc", value=-0.1, n_samples=1)
    EvalResult(brand="A", metric_name="qwk", value=-0.5, n_samples=1)


def test_evaluate_brand(
    tiny_dataset: Manifest, classifier: Classifier, audit: Audit
) -> None:
    """A brand is scored on its test split only."""
    result = evaluate_brand(classifier, tiny_dataset, "B")
    assert result.metric_name == "auc"
    assert result.n_samples == 4
    assert not result.adapted
    assert 0.0 <= result.value <= 1.0
    test_ids = {r.image_id for r in tiny_dataset.select("B", "test")}
    assert audit.consumed == {"eval:B": test_ids}


def test_evaluate_brand_without_test_images(
    tiny_dataset: Manifest, classifier: Classifier
) -> None:
    """A brand without test images cannot be evaluated."""
    manifest = tiny_dataset.model_copy(
        update={"declared_brands": tiny_dataset.declared_brands | {"C"}}
    )
    with pytest.raises(EmptyDatasetError):
        evaluate_brand(classifier, manifest, "C")


def test_evaluate_matrix_with_identity_run(
    tiny_dataset: Manifest, classifier: Classifier, random_images: torch.Tensor
) -> None:
    """An untrained run transforms nothing, so adapted and unadapted scores agree."""
    run = AdaptationTrainer(
        "A",
        "B",
        random_images[:4],
        random_images[4:],
        classifier,
        tiny_train_config(),
        generator=tiny_generator_config(),
        discriminator=tiny_discriminator_config(),
    ).run

    results = evaluate_matrix(classifier, tiny_dataset, {"A": run, "B": run})

    assert [(r.brand, r.adapted) for r in results] == [
        ("A", False),
        ("B", False),
        ("B", True),
    ]
    assert results[2].value == results[1].value
    assert [r.brand for r in evaluate_matrix(classifier, tiny_dataset)] == ["A", "B"]
