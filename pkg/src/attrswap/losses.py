"""Training objectives.

The generator minimizes adversarial + weighted classification + weighted
reconstruction terms; the critic minimizes the Wasserstein surrogate plus a
gradient penalty enforcing the 1-Lipschitz constraint; the classifier head
minimizes binary cross-entropy on real images only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

from .errors import NumericsError


@dataclass(frozen=True)
class LossWeights:
    lambda_g: float = 10.0
    lambda_rec: float = 100.0
    lambda_gp: float = 10.0
    recon_norm: str = "l1"

    def __post_init__(self):
        if min(self.lambda_g, self.lambda_rec, self.lambda_gp) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.recon_norm not in ("l1", "l2"):
            raise ValueError(f"recon_norm must be 'l1' or 'l2', got {self.recon_norm!r}")


@dataclass(frozen=True)
class LossReport:
    """All per-step scalars. l_g is exactly l_adv_g + lambda_g*l_cls_g +
    lambda_rec*l_rec; l_d additionally carries the weighted penalty."""

    l_rec: float
    l_cls_g: float
    l_cls_c: float
    l_adv_g: float
    l_adv_d: float
    grad_penalty: float
    l_g: float
    l_d: float
    l_c: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def reconstruction_loss(a: torch.Tensor, a1: torch.Tensor, norm: str = "l1") -> torch.Tensor:
    """Mean elementwise deviation between an image batch and its reconstruction."""
    if a.shape != a1.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(a1.shape)}")
    diff = a - a1
    if norm == "l1":
        return diff.abs().mean()
    if norm == "l2":
        return diff.square().mean()
    raise ValueError(f"unknown reconstruction norm {norm!r}")


def attr_cls_loss(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the per-attribute binary cross-entropy sum."""
    if probs.shape != targets.shape or probs.dim() != 2:
        raise ValueError(
            f"expected matching (batch, n_attrs) shapes, got {tuple(probs.shape)} "
            f"vs {tuple(targets.shape)}"
        )
    if not torch.all((targets == 0) | (targets == 1)):
        raise ValueError("classification targets must be binary (0/1)")
    if torch.any(probs <= 0) or torch.any(probs >= 1):
        raise NumericsError("classifier probabilities left the open interval (0, 1)")
    bce = -(targets * probs.log() + (1 - targets) * (1 - probs).log())
    return bce.sum(dim=1).mean()


def adv_loss_d(d_a: torch.Tensor, d_b: torch.Tensor, d_a2: torch.Tensor,
               d_b2: torch.Tensor) -> torch.Tensor:
    """Critic objective: real scores up, generated scores down."""
    return -d_a.mean() - d_b.mean() + d_a2.mean() + d_b2.mean()


def adv_loss_g(d_a2: torch.Tensor, d_b2: torch.Tensor) -> torch.Tensor:
    """Generator objective: generated scores up."""
    return -d_a2.mean() - d_b2.mean()


def gradient_penalty(critic_fn, real: torch.Tensor, fake: torch.Tensor, seed: int,
                     create_graph: bool = True) -> torch.Tensor:
    """Penalize the critic's gradient norm deviating from 1 between the two
    distributions, at per-sample uniform interpolates."""
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    gen = torch.Generator().manual_seed(seed)
    eps = torch.rand(real.shape[0], *([1] * (real.dim() - 1)),
                     generator=gen, dtype=real.dtype)
    mixed = (eps * real.detach() + (1 - eps) * fake.detach()).requires_grad_(True)
    scores = critic_fn(mixed)
    grads = torch.autograd.grad(scores.sum(), mixed, create_graph=create_graph,
                                allow_unused=True)[0]
    if grads is None:  # critic constant in its input
        grads = torch.zeros_like(mixed)
    norms = grads.flatten(1).norm(2, dim=1)
    return (norms - 1).square().mean()


def total_losses(*, l_rec: float, l_cls_g: float, l_cls_c: float, l_adv_g: float,
                 l_adv_d: float, grad_penalty: float, weights: LossWeights) -> LossReport:
    """Combine components into the three optimized totals and check finiteness."""
    parts = {"l_rec": l_rec, "l_cls_g": l_cls_g, "l_cls_c": l_cls_c,
             "l_adv_g": l_adv_g, "l_adv_d": l_adv_d, "grad_penalty": grad_penalty}
    for name, value in parts.items():
        if not math.isfinite(value):
            raise NumericsError(f"non-finite loss term {name}={value}")
    return LossReport(
        l_g=l_adv_g + weights.lambda_g * l_cls_g + weights.lambda_rec * l_rec,
        l_d=l_adv_d + weights.lambda_gp * grad_penalty,
        l_c=l_cls_c,
        **parts,
    )
