"""Gradient-based comparison attacks under the same L-infinity budget.

Both attacks maximize cross-entropy on the frozen classifier and operate in
normalized space, exactly like the generative attacker, so budgets and
reports are directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from advgen.targets import TargetModel
from advgen.tensors import ImageBatch, LabelBatch, float32_budget, project_linf


@dataclass(frozen=True)
class PGDConfig:
    delta: float = 0.1
    steps: int = 40
    step_size: float | None = None  # defaults to delta / 10
    random_start: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    @property
    def effective_step_size(self) -> float:
        return self.step_size if self.step_size is not None else self.delta / 10


def _loss_grad(model: TargetModel, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    x = x.detach().requires_grad_(True)
    loss = nn.functional.cross_entropy(model.net(x), labels)
    (grad,) = torch.autograd.grad(loss, x)
    if not torch.isfinite(grad).all():
        raise RuntimeError("non-finite gradient during baseline attack")
    return grad


def fgsm(model: TargetModel, batch: ImageBatch, labels: LabelBatch, delta: float) -> ImageBatch:
    """Single signed-gradient step of size delta; one backward pass per batch."""
    if model.task != "classification":
        raise ValueError("fgsm requires a classification target")
    grad = _loss_grad(model, batch.data, labels.values)
    if delta == 0:
        return batch.with_data(batch.data.clone())
    step = float32_budget(delta) * grad.sign()
    return batch.with_data(project_linf(batch.data, batch.data + step, delta))


def pgd(model: TargetModel, batch: ImageBatch, labels: LabelBatch, cfg: PGDConfig) -> ImageBatch:
    """Iterated signed steps, each projected back onto the L-inf ball of radius delta."""
    if model.task != "classification":
        raise ValueError("pgd requires a classification target")
    x0 = batch.data
    if cfg.random_start:
        x = x0 + torch.empty_like(x0).uniform_(-cfg.delta, cfg.delta)
    else:
        x = x0.clone()
    for _ in range(cfg.steps):
        grad = _loss_grad(model, x, labels.values)
        x = x + cfg.effective_step_size * grad.sign()
        x = project_linf(x0, x, cfg.delta)
    return batch.with_data(x)
