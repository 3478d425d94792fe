"""Training objectives: angular displacement, norm preservation, mask concentration.

The attack pushes apart the cosine angle between target-model features of
clean and perturbed images while keeping feature norms unchanged; a Frobenius
penalty on the saliency mask keeps the perturbed region concentrated. All
losses are batch sums; means are for logging only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

ANGULAR_EPS = 1e-12

DEFAULT_ALPHA = 1e-4


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step loss telemetry. total == angular + alpha * (norm + frobenius)."""

    angular: float
    norm: float
    frobenius: float
    total: float
    alpha: float

    def __post_init__(self):
        expected = self.angular + self.alpha * (self.norm + self.frobenius)
        if abs(self.total - expected) > 1e-6 * max(1.0, abs(expected)):
            raise ValueError(
                f"inconsistent breakdown: total={self.total}, expected {expected}"
            )


def _check_features(f: torch.Tensor, g: torch.Tensor):
    if f.dim() != 2 or g.dim() != 2:
        raise ValueError(
            f"features must be N x D, got {tuple(f.shape)} and {tuple(g.shape)}"
        )
    if f.shape != g.shape:
        raise ValueError(f"feature shapes differ: {tuple(f.shape)} vs {tuple(g.shape)}")


def angular_loss(f_orig: torch.Tensor, f_pert: torch.Tensor, eps: float = ANGULAR_EPS) -> torch.Tensor:
    """Sum over the batch of (1 + cos angle between feature pairs), in [0, 2N].

    The denominator is guarded by max(||f|| * ||g||, eps); the guard is
    treated as a constant for gradients (no flow through the clamp when
    active), the standard safe-division convention.
    """
    _check_features(f_orig, f_pert)
    dot = (f_orig * f_pert).sum(dim=1)
    denom = (f_orig.norm(dim=1) * f_pert.norm(dim=1)).clamp_min(eps)
    return (1.0 + dot / denom).sum()


def norm_loss(f_orig: torch.Tensor, f_pert: torch.Tensor) -> torch.Tensor:
    """Sum over the batch of squared differences of feature norms."""
    _check_features(f_orig, f_pert)
    return ((f_orig.norm(dim=1) - f_pert.norm(dim=1)) ** 2).sum()


def frobenius_loss(mask: torch.Tensor) -> torch.Tensor:
    """Sum over the batch of per-image Frobenius norms of the saliency mask."""
    if mask.dim() != 4:
        raise ValueError(f"expected N x 1 x H x W mask, got shape {tuple(mask.shape)}")
    return mask.flatten(1).norm(dim=1).sum()


def total_loss(angular: float, norm: float, frobenius: float, alpha: float = DEFAULT_ALPHA) -> LossBreakdown:
    """Combine components: angular + alpha * (norm + frobenius)."""
    total = angular + alpha * (norm + frobenius)
    return LossBreakdown(
        angular=float(angular),
        norm=float(norm),
        frobenius=float(frobenius),
        total=float(total),
        alpha=float(alpha),
    )
