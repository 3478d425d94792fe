"""Shared numeric data model: image batches, pixel/normalized conversion, budgets.

All image tensors are N x C x H x W. Pixel space is [0, 1]; normalized space
is (pixel - mean) / std per channel. Attacks live entirely in normalized
space, export goes back through :func:`tensor2img`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel mean/std used to map pixels [0,1] into normalized space."""

    mean: tuple[float, ...] = (0.5, 0.5, 0.5)
    std: tuple[float, ...] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise ValueError(
                f"mean has {len(self.mean)} channels but std has {len(self.std)}"
            )
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std must be positive per channel, got {self.std}")

    @property
    def channels(self) -> int:
        return len(self.mean)

    def mean_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.mean, dtype=dtype).view(1, -1, 1, 1)

    def std_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.std, dtype=dtype).view(1, -1, 1, 1)


@dataclass(frozen=True)
class ImageBatch:
    """A batch of images in normalized space plus the spec that produced it."""

    data: torch.Tensor  # N x C x H x W, normalized space
    norm: NormalizationSpec = field(default_factory=NormalizationSpec)

    def __post_init__(self):
        if self.data.dim() != 4:
            raise ValueError(f"expected N x C x H x W data, got shape {tuple(self.data.shape)}")
        if self.data.shape[1] != self.norm.channels:
            raise ValueError(
                f"batch has {self.data.shape[1]} channels but the "
                f"normalization spec has {self.norm.channels}"
            )
        if not torch.isfinite(self.data).all():
            raise ValueError("image batch contains non-finite values")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def with_data(self, data: torch.Tensor) -> "ImageBatch":
        return ImageBatch(data=data, norm=self.norm)


@dataclass(frozen=True)
class AttackBudget:
    """L-infinity bound on per-element perturbation magnitude in normalized space."""

    delta: float = 0.1

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"attack budget delta must be > 0, got {self.delta}")


@dataclass(frozen=True)
class LabelBatch:
    """Integer class ids (classification) or identity ids (retrieval)."""

    values: torch.Tensor  # int64, length N

    def __post_init__(self):
        if self.values.dim() != 1:
            raise ValueError(f"labels must be 1-D, got shape {tuple(self.values.shape)}")
        if self.values.numel() and int(self.values.min()) < 0:
            raise ValueError("labels must be >= 0")

    def __len__(self) -> int:
        return self.values.numel()


def float32_budget(delta: float) -> float:
    """Largest float32 value <= delta.

    float32(0.1) rounds above 0.1; clamping to it would overshoot an exact
    L-infinity budget stated in float64.
    """
    d = np.float32(delta)
    if float(d) > delta:
        d = np.nextafter(d, np.float32(0.0))
    return float(d)


def project_linf(reference: torch.Tensor, perturbed: torch.Tensor, delta: float) -> torch.Tensor:
    """Project perturbed onto the L-inf ball of radius delta around reference.

    Post-clamp float32 addition can round the realized difference half an ulp
    past the budget; offending entries are nudged one representable value
    toward the reference until |perturbed - reference| <= delta holds exactly.
    """
    bound = float32_budget(delta)
    out = reference + (perturbed - reference).clamp(-bound, bound)
    for _ in range(4):
        over = (out - reference).abs() > bound
        if not over.any():
            break
        out = torch.where(over, torch.nextafter(out, reference), out)
    return out


def to_normalized(pixels: torch.Tensor, spec: NormalizationSpec | None = None) -> ImageBatch:
    """Map pixel values in [0,1] to normalized space: (p - mean) / std."""
    if spec is None:
        spec = NormalizationSpec()
    if pixels.dim() != 4:
        raise ValueError(f"expected N x C x H x W pixels, got shape {tuple(pixels.shape)}")
    if pixels.shape[1] != spec.channels:
        raise ValueError(
            f"pixels have {pixels.shape[1]} channels but spec has {spec.channels}"
        )
    if pixels.numel():
        lo, hi = float(pixels.min()), float(pixels.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ValueError(f"pixel values must be in [0,1], got range [{lo}, {hi}]")
    data = (pixels - spec.mean_tensor(pixels.dtype)) / spec.std_tensor(pixels.dtype)
    return ImageBatch(data=data, norm=spec)


def tensor2img(batch: ImageBatch) -> torch.Tensor:
    """Invert normalization and clip to the valid pixel range [0, 1].

    Clipping keeps exported images valid; perturbed batches can leave [0,1]
    after denormalization.
    """
    dtype = batch.data.dtype
    pixels = batch.data * batch.norm.std_tensor(dtype) + batch.norm.mean_tensor(dtype)
    return pixels.clamp(0.0, 1.0)
