"""Objective terms of residual-CycleGAN training.

Squared norms are realized as means of elementwise squares, so the loss weights do
not depend on the image resolution.
"""

import math
from collections.abc import Callable
from typing import NamedTuple

import torch

from camadapt.models.generator import ResidueFn, transform
from camadapt.types import (
    CameraFeatureVector,
    EmptyDatasetError,
    LossBreakdown,
    NonFiniteLossError,
    NormKind,
)

PROB_FLOOR = 1e-7
DEFAULT_LAMBDA1 = 0.2
DEFAULT_LAMBDA2 = 5.0

type ProbabilityFn = Callable[[torch.Tensor], torch.Tensor]


def _vectors(features: CameraFeatureVector | torch.Tensor) -> torch.Tensor:
    return features.vector if isinstance(features, CameraFeatureVector) else features


def _log_prob(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp_min(PROB_FLOOR))


def adversarial_loss(
    d: ProbabilityFn,
    real_features: CameraFeatureVector | torch.Tensor,
    fake_features: CameraFeatureVector | torch.Tensor,
    *,
    non_saturating: bool = False,
) -> torch.Tensor:
    """Adversarial term ``E[log D(real)] + E[log(1 - D(fake))]``.

    Probabilities are floored at 1e-7 inside the logarithms. With
    ``non_saturating`` the fake term becomes ``-E[log D(fake)]``, which the
    generator can still minimize when the discriminator is confident.

    Args:
        d: The discriminator, or any callable returning probabilities.
        real_features: Feature vectors of real-domain images, shape (N, D).
        fake_features: Feature vectors of transformed images, shape (M, D).
        non_saturating: Use the non-saturating fake term.

    Returns:
        torch.Tensor: The scalar loss.

    Raises:
        EmptyDatasetError: If either batch is empty.
    """
    real = _vectors(real_features)
    fake = _vectors(fake_features)
    if real.shape[0] == 0 or fake.shape[0] == 0:
        msg = "Adversarial loss needs non-empty real and fake batches"
        raise EmptyDatasetError(msg)
    real_term = _log_prob(d(real)).mean()
    p_fake = d(fake)
    if non_saturating:
        return real_term - _log_prob(p_fake).mean()
    return real_term + _log_prob(1.0 - p_fake).mean()


def _penalty(x: torch.Tensor, norm: NormKind) -> torch.Tensor:
    return x.abs().mean() if norm == "l1" else x.pow(2).mean()


class CycleForward(NamedTuple):
    """Transformed images and residues of one pass through both generators."""

    a_b: torch.Tensor
    residue_fa: torch.Tensor
    b_a: torch.Tensor
    residue_gb: torch.Tensor


def cycle_forward(
    f: ResidueFn, g: ResidueFn, a_batch: torch.Tensor, b_batch: torch.Tensor
) -> CycleForward:
    """Transform domain-A images with F and domain-B images with G."""
    a_b, residue_fa = transform(f, a_batch)
    b_a, residue_gb = transform(g, b_batch)
    return CycleForward(a_b, residue_fa, b_a, residue_gb)


def cycle_terms(  # noqa: PLR0913
    f: ResidueFn,
    g: ResidueFn,
    a_batch: torch.Tensor,
    b_batch: torch.Tensor,
    norm: NormKind = "l2",
    *,
    forward: CycleForward | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Penalties on ``F(a) + G(a_B)`` and ``G(b) + F(b_A)``.

    ``a_B`` and ``b_A`` are the clamped transformed images, so a perfect cycle
    means the second residue cancels the first. A precomputed ``forward`` of the
    same batches saves the first generator pass.
    """
    fwd = forward or cycle_forward(f, g, a_batch, b_batch)
    return (
        _penalty(fwd.residue_fa + g(fwd.a_b), norm),
        _penalty(fwd.residue_gb + f(fwd.b_a), norm),
    )


def cycle_loss(  # noqa: PLR0913
    f: ResidueFn,
    g: ResidueFn,
    a_batch: torch.Tensor,
    b_batch: torch.Tensor,
    norm: NormKind = "l2",
    *,
    forward: CycleForward | None = None,
) -> torch.Tensor:
    """Residual cycle-consistency loss.

    Args:
        f: Generator mapping domain A to domain B.
        g: Generator mapping domain B to domain A.
        a_batch: Domain-A images, shape (N, 3, H, W).
        b_batch: Domain-B images, shape (M, 3, H, W).
        norm: ``l2`` for mean squares, ``l1`` for mean absolute values.
        forward: Precomputed `cycle_forward` of the same batches.

    Returns:
        torch.Tensor: The scalar loss, always >= 0.
    """
    first, second = cycle_terms(f, g, a_batch, b_batch, norm, forward=forward)
    return first + second


def identity_loss(
    f: ResidueFn,
    g: ResidueFn,
    a_batch: torch.Tensor,
    b_batch: torch.Tensor,
    norm: NormKind = "l2",
) -> torch.Tensor:
    """Identity loss: residues of generators fed their own output domain.

    F is applied to domain-B images and G to domain-A images; both residues
    should vanish.

    Args:
        f: Generator mapping domain A to domain B.
        g: Generator mapping domain B to domain A.
        a_batch: Domain-A images.
        b_batch: Domain-B images.
        norm: ``l2`` for mean squares, ``l1`` for mean absolute values.

    Returns:
        torch.Tensor: The scalar loss, always >= 0.
    """
    return _penalty(f(b_batch), norm) + _penalty(g(a_batch), norm)


def weighted_objective(  # noqa: PLR0913
    gan_f: torch.Tensor,
    gan_g: torch.Tensor,
    cyc: torch.Tensor,
    idt: torch.Tensor,
    lambda1: float = DEFAULT_LAMBDA1,
    lambda2: float = DEFAULT_LAMBDA2,
) -> torch.Tensor:
    """The differentiable total ``gan_F + gan_G + lambda1 * idt + lambda2 * cyc``."""
    return gan_f + gan_g + lambda1 * idt + lambda2 * cyc


def total_loss(  # noqa: PLR0913
    gan_f: float | torch.Tensor,
    gan_g: float | torch.Tensor,
    cyc: float | torch.Tensor,
    idt: float | torch.Tensor,
    lambda1: float = DEFAULT_LAMBDA1,
    lambda2: float = DEFAULT_LAMBDA2,
) -> LossBreakdown:
    """Combine the loss terms into a breakdown with the weighted total.

    Args:
        gan_f: Adversarial term of F against D_B.
        gan_g: Adversarial term of G against D_A.
        cyc: Cycle-consistency term.
        idt: Identity term.
        lambda1: Identity weight.
        lambda2: Cycle weight.

    Returns:
        LossBreakdown: All terms, weights and the total.

    Raises:
        NonFiniteLossError: If a term is NaN or infinite.
    """
    values = {
        "gan_F": float(gan_f),
        "gan_G": float(gan_g),
        "cyc": float(cyc),
        "idt": float(idt),
    }
    for term, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(term, value)
    total = (
        values["gan_F"]
        + values["gan_G"]
        + lambda1 * values["idt"]
        + lambda2 * values["cyc"]
    )
    return LossBreakdown(**values, lambda1=lambda1, lambda2=lambda2, total=total)
