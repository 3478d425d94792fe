"""Two-phase optimization of the attacker against a frozen target model.

Phase 1 trains with the angular objective alone; phase 2 adds the norm and
mask-concentration terms (the concentration penalty dominates if enabled from
the start). The target is never updated; a parameter digest is checked before
and after training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import torch

from advgen.generator import (
    GeneratorConfig,
    SaliencyAutoEncoder,
    build_generator,
    save_checkpoint,
)
from advgen.losses import LossBreakdown, angular_loss, frobenius_loss, norm_loss
from advgen.targets import TargetModel, extract_features
from advgen.tensors import ImageBatch, to_normalized

PHASE_ANGULAR_ONLY = "angular_only"
PHASE_FULL = "full"

LOSS_CSV_COLUMNS = ("epoch", "step", "angular", "norm", "frobenius", "total")


@dataclass(frozen=True)
class TrainConfig:
    epochs_phase1: int = 20
    epochs_phase2: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-5
    alpha: float = 1e-4
    optimizer: str = "adam"
    seed: int = 0
    delta: float = 0.1
    base_width: int = 16
    num_resblocks: int = 6

    def __post_init__(self):
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    @property
    def total_epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def generator_config(self, in_channels=3) -> GeneratorConfig:
        return GeneratorConfig(
            in_channels=in_channels,
            base_width=self.base_width,
            num_resblocks=self.num_resblocks,
            delta=self.delta,
        )


@dataclass
class TrainState:
    model: SaliencyAutoEncoder
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    epoch: int = 0
    history: list[LossBreakdown] = field(default_factory=list)


def phase_for_epoch(epoch: int, cfg: TrainConfig) -> str:
    """Which objective applies at a given epoch of the two-phase schedule."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch < cfg.epochs_phase1:
        return PHASE_ANGULAR_ONLY
    if epoch < cfg.total_epochs:
        return PHASE_FULL
    raise ValueError(f"epoch {epoch} is beyond the {cfg.total_epochs}-epoch schedule")


def init_state(cfg: TrainConfig, in_channels: int = 3) -> TrainState:
    model = build_generator(cfg.generator_config(in_channels), cfg.seed)
    model.train()
    # Adam beta/eps beyond the learning rate use conventional defaults.
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    return TrainState(model=model, optimizer=opt, config=cfg)


def train_step(
    state: TrainState,
    target: TargetModel,
    batch: ImageBatch,
    phase: str = PHASE_ANGULAR_ONLY,
) -> LossBreakdown:
    """One forward pass, one loss evaluation, one attacker-only update."""
    perturbed, _pert, mask = state.model(batch)
    f_orig = extract_features(target, batch)
    f_pert = extract_features(target, perturbed, grad=True)

    ang = angular_loss(f_orig, f_pert)
    nrm = norm_loss(f_orig, f_pert)
    frob = frobenius_loss(mask)

    if phase == PHASE_ANGULAR_ONLY:
        # Exactly the angular objective: norm/frobenius contribute nothing to
        # the applied gradient and the recorded alpha is 0.
        loss = ang
        alpha = 0.0
    elif phase == PHASE_FULL:
        alpha = state.config.alpha
        loss = ang + alpha * (nrm + frob)
    else:
        raise ValueError(f"unknown phase {phase!r}")

    for name, value in (("angular", ang), ("norm", nrm), ("frobenius", frob)):
        if not torch.isfinite(value):
            raise RuntimeError(f"non-finite {name} loss at epoch {state.epoch}")

    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()

    breakdown = LossBreakdown(
        angular=float(ang.detach()),
        norm=float(nrm.detach()),
        frobenius=float(frob.detach()),
        total=float(loss.detach()),
        alpha=alpha,
    )
    state.history.append(breakdown)
    return breakdown


def train(
    cfg: TrainConfig,
    target: TargetModel,
    train_pixels: torch.Tensor,
    out_dir: str | Path | None = None,
    dataset_id: str = "dataset",
) -> TrainState:
    """Run the full two-phase schedule over a pixel-space training set.

    Deterministic for a fixed seed: fixed initialization and a seeded
    per-epoch shuffle. Checkpoints are written at the phase boundary and at
    the end when out_dir is given, alongside the loss-history CSV.
    """
    if train_pixels.shape[0] == 0:
        raise ValueError("training set is empty")
    torch.manual_seed(cfg.seed)
    state = init_state(cfg, in_channels=train_pixels.shape[1])
    data = to_normalized(train_pixels, target.norm).data
    n = data.shape[0]
    digest_before = target.digest

    provenance = {"train_target": target.identifier, "train_dataset": dataset_id}
    order_rng = torch.Generator().manual_seed(cfg.seed)
    rows = []
    for epoch in range(cfg.total_epochs):
        state.epoch = epoch
        phase = phase_for_epoch(epoch, cfg)
        order = torch.randperm(n, generator=order_rng)
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch = ImageBatch(data=data[idx], norm=target.norm)
            breakdown = train_step(state, target, batch, phase)
            rows.append((epoch, step, breakdown))
        if out_dir is not None and epoch + 1 == cfg.epochs_phase1:
            save_checkpoint(
                Path(out_dir) / "checkpoint_phase1", state.model, cfg.seed, epoch, provenance
            )

    from advgen.generator import weights_digest

    if weights_digest(target.net) != digest_before:
        raise RuntimeError(f"target {target.identifier} was mutated during training")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            out_dir / "checkpoint_final", state.model, cfg.seed, cfg.total_epochs - 1, provenance
        )
        write_loss_csv(out_dir / "loss_history.csv", rows)
    return state


def write_loss_csv(path: str | Path, rows) -> Path:
    """Loss telemetry as CSV with columns epoch, step, angular, norm, frobenius, total."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CSV_COLUMNS)
        for epoch, step, b in rows:
            writer.writerow(
                [epoch, step, repr(b.angular), repr(b.norm), repr(b.frobenius), repr(b.total)]
            )
    return path
