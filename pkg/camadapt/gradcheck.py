"""Finite-difference verification of the adaptation loss gradients.

Every loss term is evaluated on a small float64 problem. For a sample of scalar
parameters of the networks the term depends on, the autograd derivative is
compared with the central difference ``(L(p + h) - L(p - h)) / 2h``.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import torch
from pydantic import BaseModel, ConfigDict
from torch import nn

from camadapt.features import CameraFeatureExtractor, FeatureStats
from camadapt.losses import adversarial_loss, cycle_loss, identity_loss
from camadapt.models.classifier import Classifier, ClassifierConfig
from camadapt.models.discriminator import Discriminator, DiscriminatorConfig
from camadapt.models.generator import (
    SIZE_MULTIPLE,
    GeneratorConfig,
    ResidualGenerator,
    transform,
)

logger = logging.getLogger(__name__)

DEFAULT_SIZE = 16
DEFAULT_SAMPLES = 20
DEFAULT_STEP = 1e-6
DEFAULT_TOLERANCE = 1e-2
DENOMINATOR_FLOOR = 1e-6
HEAD_STD = 0.01
BATCH = 4

type GradientHook = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class ToyProblem:
    """Tiny float64 networks and batches for gradient checks."""

    f: ResidualGenerator
    g: ResidualGenerator
    d_a: Discriminator
    d_b: Discriminator
    classifier: Classifier
    extractor: CameraFeatureExtractor
    a_batch: torch.Tensor
    b_batch: torch.Tensor


def build_toy_problem(size: int = DEFAULT_SIZE, seed: int = 0) -> ToyProblem:
    """Build the gradient-check problem.

    Generators have base width 4 and a single residual block; their heads are
    drawn with std 0.01 instead of zero so that the residue is not trivially
    zero. At 16x16 the bottleneck is 1x1, where instance normalization outputs
    zeros and only the head bias receives gradient; larger sizes exercise the
    whole generator. Images lie in [0.2, 0.8], away from the clamp at the
    borders of [0, 1].

    Raises:
        ValueError: If ``size`` is not a multiple of 16.
    """
    if size % SIZE_MULTIPLE:
        msg = f"Gradient check size {size} is not divisible by {SIZE_MULTIPLE}"
        raise ValueError(msg)
    dtype = torch.float64
    gen_config = GeneratorConfig(base_width=4, residual_blocks=1, image_size=size)
    classifier = Classifier(
        ClassifierConfig(widths=(4, 8), blocks_per_stage=1, image_size=size),
        seed=seed,
    ).to(dtype)

    generator = torch.Generator().manual_seed(seed)
    gens = []
    for offset in (0, 1):
        gen = ResidualGenerator(gen_config, seed=seed + offset).to(dtype)
        nn.init.normal_(gen.head.weight, 0.0, HEAD_STD, generator=generator)
        nn.init.normal_(gen.head.bias, 0.0, HEAD_STD, generator=generator)
        gens.append(gen)

    def images() -> torch.Tensor:
        u = torch.rand(BATCH, 3, size, size, generator=generator, dtype=dtype)
        return 0.2 + 0.6 * u

    a_batch, b_batch = images(), images()
    extractor = CameraFeatureExtractor(classifier)
    with torch.no_grad():
        raw = extractor.raw(torch.cat([a_batch, b_batch]))
    extractor = extractor.with_stats(FeatureStats.from_vectors(raw))

    d_config = DiscriminatorConfig(hidden=16)
    return ToyProblem(
        f=gens[0],
        g=gens[1],
        d_a=Discriminator(extractor.width, d_config, seed=seed + 2).to(dtype),
        d_b=Discriminator(extractor.width, d_config, seed=seed + 3).to(dtype),
        classifier=classifier,
        extractor=extractor,
        a_batch=a_batch,
        b_batch=b_batch,
    )


def _gan_term(
    problem: ToyProblem,
    d: Discriminator,
    gen: ResidualGenerator,
    real: torch.Tensor,
    source: torch.Tensor,
) -> torch.Tensor:
    fake, _ = transform(gen, source)
    return adversarial_loss(
        d, problem.extractor(real).vector, problem.extractor(fake, "soft").vector
    )


def term_functions(
    problem: ToyProblem,
) -> dict[str, tuple[Callable[[], torch.Tensor], list[nn.Module]]]:
    """Each loss term as a closure, with the networks it depends on."""
    p = problem
    return {
        "gan_F": (
            lambda: _gan_term(p, p.d_b, p.f, p.b_batch, p.a_batch),
            [p.f, p.d_b, p.classifier],
        ),
        "gan_G": (
            lambda: _gan_term(p, p.d_a, p.g, p.a_batch, p.b_batch),
            [p.g, p.d_a, p.classifier],
        ),
        "cyc": (lambda: cycle_loss(p.f, p.g, p.a_batch, p.b_batch), [p.f, p.g]),
        "idt": (lambda: identity_loss(p.f, p.g, p.a_batch, p.b_batch), [p.f, p.g]),
    }


class TermCheck(BaseModel):
    """Result of the gradient check of one loss term."""

    term: str
    max_rel_error: float
    checked: int
    passed: bool

    model_config = ConfigDict(frozen=True)


class GradcheckReport(BaseModel):
    """Gradient check results, one row per loss term."""

    rows: list[TermCheck]
    tolerance: float

    model_config = ConfigDict(frozen=True)

    @property
    def passed(self) -> bool:
        """Whether every term is within tolerance."""
        return all(row.passed for row in self.rows)


def relative_error(analytic: float, numeric: float) -> float:
    """``|a - n| / max(|a|, |n|, 1e-6)``."""
    scale = max(abs(analytic), abs(numeric), DENOMINATOR_FLOOR)
    return abs(analytic - numeric) / scale


def _sample_entries(
    modules: list[nn.Module], samples: int, generator: torch.Generator
) -> list[tuple[nn.Parameter, int]]:
    """Draw scalar entries, split evenly over the modules and size-weighted within."""
    entries = []
    for i, module in enumerate(modules):
        count = samples // len(modules) + (i < samples % len(modules))
        if count == 0:
            continue
        params = list(module.parameters())
        sizes = torch.tensor([p.numel() for p in params], dtype=torch.float64)
        owners = torch.multinomial(sizes, count, replacement=True, generator=generator)
        for owner in owners.tolist():
            param = params[owner]
            index = int(torch.randint(param.numel(), (1,), generator=generator))
            entries.append((param, index))
    return entries


def check_term(  # noqa: PLR0913
    loss_fn: Callable[[], torch.Tensor],
    modules: list[nn.Module],
    *,
    samples: int,
    step: float,
    generator: torch.Generator,
    gradient_hook: GradientHook | None = None,
) -> tuple[float, int]:
    """Compare autograd and central-difference derivatives of one term.

    Returns:
        tuple[float, int]: The maximum relative error and the number of checked
            entries.
    """
    entries = _sample_entries(modules, samples, generator)
    params = list(dict.fromkeys(p for p, _ in entries))
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    grad_of = {
        id(p): torch.zeros_like(p) if g is None else g
        for p, g in zip(params, grads, strict=True)
    }

    worst = 0.0
    with torch.no_grad():
        for param, index in entries:
            grad = grad_of[id(param)]
            if gradient_hook is not None:
                grad = gradient_hook(grad)
            analytic = float(grad.reshape(-1)[index])
            flat = param.view(-1)
            original = float(flat[index])
            flat[index] = original + step
            plus = float(loss_fn())
            flat[index] = original - step
            minus = float(loss_fn())
            flat[index] = original
            numeric = (plus - minus) / (2 * step)
            error = relative_error(analytic, numeric)
            logger.debug(
                "analytic %.6e numeric %.6e rel %.2e", analytic, numeric, error
            )
            worst = max(worst, error)
    return worst, len(entries)


def run_gradcheck(  # noqa: PLR0913
    size: int = DEFAULT_SIZE,
    seed: int = 0,
    *,
    samples: int = DEFAULT_SAMPLES,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    gradient_hook: GradientHook | None = None,
) -> GradcheckReport:
    """Check the gradients of all four loss terms.

    Args:
        size: Image side length, a multiple of 16.
        seed: Seed of the networks, the images and the sampled entries.
        samples: Scalar parameters checked per term.
        step: Finite-difference step.
        tolerance: Maximum accepted relative error.
        gradient_hook: Applied to every autograd gradient before comparison;
            a corrupting hook must make the check fail.

    Returns:
        GradcheckReport: One row per loss term.
    """
    problem = build_toy_problem(size, seed)
    generator = torch.Generator().manual_seed(seed)
    rows = []
    for term, (loss_fn, modules) in term_functions(problem).items():
        worst, checked = check_term(
            loss_fn,
            modules,
            samples=samples,
            step=step,
            generator=generator,
            gradient_hook=gradient_hook,
        )
        rows.append(
            TermCheck(
                term=term,
                max_rel_error=worst,
                checked=checked,
                passed=worst < tolerance,
            )
        )
        logger.info("Gradient check %s: max relative error %.2e", term, worst)
    return GradcheckReport(rows=rows, tolerance=tolerance)
