"""Quadratic weighted kappa, ROC AUC and the brand evaluation matrix."""

import logging
import warnings
from collections.abc import Mapping, Sequence
from typing import Literal

import numpy as np
import torch
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix

from camadapt.manifest import Manifest
from camadapt.models.classifier import Classifier, ClassifierOutput, classify
from camadapt.training.adaptation import AdaptationRun, adapt_and_classify
from camadapt.training.data import load_images, load_labels
from camadapt.types import (
    DegenerateKappaWarning,
    DomainId,
    EmptyDatasetError,
    EvalResult,
    Split,
    Task,
)

logger = logging.getLogger(__name__)

EXACT_AUC_LIMIT = 10_000
EVAL_BATCH = 64

type MetricName = Literal["qwk", "auc"]


def _as_int_array(values: Sequence[int] | np.ndarray, name: str) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim != 1:
        msg = f"{name} must be one-dimensional, got shape {array.shape}"
        raise ValueError(msg)
    return array.astype(np.int64)


def quadratic_weighted_kappa(
    labels: Sequence[int] | np.ndarray,
    preds: Sequence[int] | np.ndarray,
    num_classes: int,
) -> float:
    """Chance-corrected ordinal agreement with squared-distance weights.

    ``kappa = 1 - sum(w * O) / sum(w * E)`` with ``w_ij = (i - j)^2 / (K - 1)^2``,
    ``O`` the normalized confusion matrix and ``E`` the outer product of its
    marginals.

    Args:
        labels: True grades.
        preds: Predicted grades.
        num_classes: Number of classes K.

    Returns:
        float: Kappa in [-1, 1]. When both sequences are the same constant the
            denominator is zero and 1.0 is returned with a
            `DegenerateKappaWarning`.

    Raises:
        ValueError: If the lengths differ, the input is empty or a value is
            outside ``[0, num_classes)``.
    """
    y_true = _as_int_array(labels, "labels")
    y_pred = _as_int_array(preds, "preds")
    if y_true.shape != y_pred.shape:
        msg = f"{y_true.size} labels but {y_pred.size} predictions"
        raise ValueError(msg)
    if y_true.size == 0:
        msg = "Kappa needs at least one sample"
        raise ValueError(msg)
    if num_classes < 2:  # noqa: PLR2004
        msg = f"Kappa needs at least 2 classes, got {num_classes}"
        raise ValueError(msg)
    for name, values in (("labels", y_true), ("preds", y_pred)):
        if values.min() < 0 or values.max() >= num_classes:
            msg = f"{name} must lie in [0, {num_classes})"
            raise ValueError(msg)

    observed = confusion_matrix(y_true, y_pred, labels=np.arange(num_classes))
    observed = observed.astype(np.float64) / y_true.size
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    idx = np.arange(num_classes)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (num_classes - 1) ** 2

    denominator = float((weights * expected).sum())
    if denominator == 0.0:
        msg = "Kappa denominator is zero (labels and predictions are one constant)"
        logger.warning(msg)
        warnings.warn(msg, DegenerateKappaWarning, stacklevel=2)
        return 1.0
    return 1.0 - float((weights * observed).sum()) / denominator


def auc(
    labels: Sequence[int] | np.ndarray, scores: Sequence[float] | np.ndarray
) -> float:
    """Probability that a random positive outscores a random negative.

    Ties count one half. Up to 10,000 samples every positive/negative pair is
    compared; larger inputs use the equivalent rank-sum formula.

    Args:
        labels: Binary labels, 1 for positive.
        scores: Scores, higher meaning more likely positive.

    Returns:
        float: The area under the ROC curve.

    Raises:
        ValueError: If the lengths differ, a label is not 0 or 1, or only one
            class is present.
    """
    y = _as_int_array(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        msg = f"{y.size} labels but {s.size} scores"
        raise ValueError(msg)
    if not np.isin(y, (0, 1)).all():
        msg = "AUC labels must be 0 or 1"
        raise ValueError(msg)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        msg = "AUC needs at least one positive and one negative sample"
        raise ValueError(msg)

    if y.size <= EXACT_AUC_LIMIT:
        greater = (pos[:, None] > neg[None, :]).sum()
        ties = (pos[:, None] == neg[None, :]).sum()
        return float(greater + 0.5 * ties) / (pos.size * neg.size)
    ranks = rankdata(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - pos.size * (pos.size + 1) / 2) / (pos.size * neg.size)


def metric_for(task: Task) -> MetricName:
    """The metric reported for a task: QWK for grading, AUC for binary."""
    return "qwk" if task is Task.grading5 else "auc"


def score_output(
    task: Task, labels: Sequence[int] | np.ndarray, output: ClassifierOutput
) -> float:
    """Score a classifier output against labels with the metric of the task."""
    if task is Task.grading5:
        return quadratic_weighted_kappa(
            labels, output.labels.cpu().numpy(), task.num_classes
        )
    return auc(labels, output.scores.detach().cpu().numpy())


def _concat(outputs: list[ClassifierOutput]) -> ClassifierOutput:
    return ClassifierOutput(*(torch.cat(parts) for parts in zip(*outputs, strict=True)))


def _predict(
    classifier: Classifier,
    images: torch.Tensor,
    run: AdaptationRun | None,
) -> ClassifierOutput:
    dtype = next(classifier.parameters()).dtype
    outputs = []
    for chunk in images.to(dtype).split(EVAL_BATCH):
        if run is None:
            outputs.append(classify(classifier, chunk))
        else:
            outputs.append(adapt_and_classify(run, chunk)[1])
    return _concat(outputs)


def evaluate_brand(
    classifier: Classifier,
    manifest: Manifest,
    brand: DomainId,
    run: AdaptationRun | None = None,
) -> EvalResult:
    """Evaluate one brand's test split, transformed by a run when given.

    Raises:
        EmptyDatasetError: If the brand has no test images.
    """
    records = manifest.select(brand, Split.test)
    if not records:
        msg = f"Brand {brand!r} has no test images"
        raise EmptyDatasetError(msg)
    images = load_images(
        manifest, records, classifier.config.image_size, phase=f"eval:{brand}"
    )
    labels = load_labels(records).numpy()
    value = score_output(manifest.task, labels, _predict(classifier, images, run))
    result = EvalResult(
        brand=brand,
        metric_name=metric_for(manifest.task),
        value=value,
        n_samples=len(records),
        adapted=run is not None,
    )
    logger.info(
        "%s %s on %d images: %.4f",
        brand,
        "adapted" if result.adapted else "unadapted",
        result.n_samples,
        result.value,
    )
    return result


def evaluate_matrix(
    classifier: Classifier,
    manifest: Manifest,
    runs: Mapping[DomainId, AdaptationRun] | None = None,
) -> list[EvalResult]:
    """Evaluate every declared brand, with and without its adaptation.

    Each brand gets an unadapted result; brands with a run in ``runs`` also get
    an adapted one. A run's source brand is never adapted.

    Args:
        classifier: The source classifier.
        manifest: The dataset; its task selects QWK or AUC.
        runs: Adaptation runs keyed by target brand.

    Returns:
        list[EvalResult]: Results sorted by brand, unadapted before adapted.

    Raises:
        EmptyDatasetError: If a declared brand has no test images.
    """
    runs = runs or {}
    results = []
    for brand in manifest.brands:
        results.append(evaluate_brand(classifier, manifest, brand))
        run = runs.get(brand)
        if run is not None and run.source != brand:
            results.append(evaluate_brand(classifier, manifest, brand, run))
    return results
