"""The attacker network: a shared encoder with symmetric noise/saliency decoders.

One forward pass produces a raw noise field and a raw saliency map for a
whole batch. The noise is clamped to the L-infinity budget, the saliency map
is min-max normalized per image to [0,1], and their element-wise product is
the final perturbation added in normalized space. The target model is never
queried at attack time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from advgen.tensors import AttackBudget, ImageBatch, float32_budget, project_linf

SALIENCY_EPS = 1e-8

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_WEIGHTS = "weights.pt"


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    base_width: int = 16
    num_resblocks: int = 6
    delta: float = 0.1

    def __post_init__(self):
        if self.num_resblocks < 1:
            raise ValueError(f"num_resblocks must be >= 1, got {self.num_resblocks}")
        if self.base_width < 8:
            raise ValueError(f"base_width must be >= 8, got {self.base_width}")
        AttackBudget(self.delta)  # validates delta > 0

    @property
    def budget(self) -> AttackBudget:
        return AttackBudget(self.delta)


class ResBlock(nn.Module):
    """Two 3x3 convolutions with per-instance normalization and an additive skip."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


def _encoder(in_channels, width, num_resblocks):
    layers = [
        nn.Conv2d(in_channels, width, 7, padding=3),
        nn.InstanceNorm2d(width, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
        nn.InstanceNorm2d(width * 2, affine=True),
        nn.ReLU(inplace=True),
        nn.Conv2d(width * 2, width * 4, 3, stride=2, padding=1),
        nn.InstanceNorm2d(width * 4, affine=True),
        nn.ReLU(inplace=True),
    ]
    layers += [ResBlock(width * 4) for _ in range(num_resblocks)]
    return nn.Sequential(*layers)


def _decoder(width, out_channels):
    # Last layer has no activation: the noise branch is clamped afterwards and
    # the saliency branch is min-max normalized afterwards.
    return nn.Sequential(
        nn.ConvTranspose2d(width * 4, width * 2, 3, stride=2, padding=1, output_padding=1),
        nn.InstanceNorm2d(width * 2, affine=True),
        nn.ReLU(inplace=True),
        nn.ConvTranspose2d(width * 2, width, 3, stride=2, padding=1, output_padding=1),
        nn.InstanceNorm2d(width, affine=True),
        nn.ReLU(inplace=True),
        nn.ConvTranspose2d(width, out_channels, 7, padding=3),
    )


class SaliencyAutoEncoder(nn.Module):
    """Encoder + noise decoder + saliency decoder producing bounded perturbations."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        self.encoder = _encoder(config.in_channels, config.base_width, config.num_resblocks)
        self.noise_decoder = _decoder(config.base_width, config.in_channels)
        self.saliency_decoder = _decoder(config.base_width, 1)

    def encode(self, batch: ImageBatch) -> torch.Tensor:
        x = batch.data
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        _check_divisible(x.shape[2], x.shape[3])
        return self.encoder(x)

    def decode_noise(self, latent: torch.Tensor) -> torch.Tensor:
        return self.noise_decoder(latent)

    def decode_saliency(self, latent: torch.Tensor) -> torch.Tensor:
        return self.saliency_decoder(latent)

    def forward(self, batch: ImageBatch):
        """Return (perturbed batch, perturbation field, saliency field)."""
        latent = self.encode(batch)
        noise = bound_noise(self.decode_noise(latent), self.config.budget)
        mask = normalize_saliency(self.decode_saliency(latent))
        pert = compose_perturbation(noise, mask)
        return batch.with_data(batch.data + pert), pert, mask


def _check_divisible(h, w):
    if h % 4 or w % 4:
        raise ValueError(f"spatial dims must be divisible by 4, got {h}x{w}")


def build_generator(config: GeneratorConfig, seed: int) -> SaliencyAutoEncoder:
    """Deterministically initialized attacker for a given (config, seed).

    The noise decoder's final convolution starts scaled down so the raw
    noise begins inside the budget: a full-size random init would be clamped
    almost everywhere and the clamp would block all gradients to the
    decoder. It is not zeroed outright because a perturbation of exactly
    zero leaves the feature cosine at its maximum, where its gradient
    vanishes and training cannot start.
    """
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SaliencyAutoEncoder(config)
    last = model.noise_decoder[-1]
    with torch.no_grad():
        last.weight.mul_(0.05)
        last.bias.zero_()
    return model


def bound_noise(raw: torch.Tensor, budget: AttackBudget) -> torch.Tensor:
    """Sign-preserving clamp of the raw noise into [-delta, +delta].

    The subgradient passes through the unclamped region and is zero where
    the clamp is active. The clamp bound is the largest float32 <= delta so
    the budget holds exactly against the float64 delta.
    """
    bound = float32_budget(budget.delta)
    return raw.clamp(-bound, bound)


def normalize_saliency(raw: torch.Tensor) -> torch.Tensor:
    """Per-image min-max normalization of a raw N x 1 x H x W saliency map.

    Non-constant maps attain exactly 0 and 1; constant maps normalize to all
    zeros (the denominator is floored at SALIENCY_EPS).
    """
    if raw.dim() != 4 or raw.shape[1] != 1:
        raise ValueError(f"expected N x 1 x H x W saliency, got shape {tuple(raw.shape)}")
    flat = raw.flatten(1)
    lo = flat.min(dim=1).values.view(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1, 1)
    return (raw - lo) / (hi - lo).clamp_min(SALIENCY_EPS)


def compose_perturbation(noise: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Element-wise product of bounded noise and the [0,1] saliency mask.

    The single-channel mask broadcasts across color channels, so the budget
    bound on the noise is inherited by the perturbation.
    """
    if noise.shape[0] != mask.shape[0] or noise.shape[2:] != mask.shape[2:]:
        raise ValueError(
            f"noise shape {tuple(noise.shape)} does not match mask shape {tuple(mask.shape)}"
        )
    return noise * mask


def attack_batch(model: SaliencyAutoEncoder, batch: ImageBatch):
    """Single-forward-pass attack. Returns (perturbed, perturbation, saliency).

    The perturbed batch is re-projected so that even after float32 addition
    the realized difference from the input never exceeds the budget; the
    returned perturbation is that realized difference.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            perturbed, _, mask = model(batch)
            projected = project_linf(batch.data, perturbed.data, model.config.delta)
            return batch.with_data(projected), projected - batch.data, mask
    finally:
        model.train(was_training)


def save_checkpoint(path, model: SaliencyAutoEncoder, seed: int, epoch: int, extra: dict | None = None) -> Path:
    """Write a checkpoint directory: JSON manifest + binary parameter blob."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "advgen-checkpoint-v1",
        "config": asdict(model.config),
        "seed": seed,
        "epoch": epoch,
        **(extra or {}),
    }
    (path / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    torch.save(model.state_dict(), path / CHECKPOINT_WEIGHTS)
    return path


def load_checkpoint(path) -> tuple[SaliencyAutoEncoder, dict]:
    """Load a checkpoint directory; outputs are bit-identical on the same platform."""
    path = Path(path)
    manifest_path = path / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    config = GeneratorConfig(**manifest["config"])
    model = SaliencyAutoEncoder(config)
    state = torch.load(path / CHECKPOINT_WEIGHTS, weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, manifest


def weights_digest(module: nn.Module) -> str:
    """SHA-256 over all parameter bytes, in state-dict order."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
