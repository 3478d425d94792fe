"""Frozen target models: feature extraction, classification, retrieval ranking.

A :class:`TargetModel` is a frozen handle over a victim network. Features are
taken before the final fully connected head; the attacker only ever sees
those features. Two desk-scale reference architectures are built in: a
4-convolution classifier and a small embedding CNN for retrieval, both
trainable in minutes on CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from advgen.generator import weights_digest
from advgen.tensors import ImageBatch, LabelBatch, NormalizationSpec


class DeskClassifier(nn.Module):
    """4-conv CNN for 32x32 inputs; features are the pooled last-conv output."""

    def __init__(self, num_classes=10, width=32, feature_dim=128):
        super().__init__()
        self.feature_dim = feature_dim
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width * 2, width * 4, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width * 4, feature_dim, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(feature_dim, num_classes)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.body(x))


class DeskEmbedder(nn.Module):
    """Small embedding CNN for retrieval; the identity head is training-only."""

    def __init__(self, num_identities=20, width=24, feature_dim=64):
        super().__init__()
        self.feature_dim = feature_dim
        self.body = nn.Sequential(
            nn.Conv2d(3, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width * 2, feature_dim, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.head = nn.Linear(feature_dim, num_identities)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.body(x))


ARCHITECTURES = {
    "desk_classifier": DeskClassifier,
    "desk_embedder": DeskEmbedder,
}


@dataclass
class TargetModel:
    """Frozen victim handle shared by training, attacks, and evaluation."""

    identifier: str
    task: str  # "classification" | "retrieval"
    net: nn.Module
    input_size: tuple[int, int, int]  # C, H, W
    norm: NormalizationSpec = field(default_factory=NormalizationSpec)

    def __post_init__(self):
        if self.task not in ("classification", "retrieval"):
            raise ValueError(f"unknown task {self.task!r}")
        self.net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.digest = weights_digest(self.net)

    @property
    def feature_dim(self) -> int:
        return self.net.feature_dim

    def _check_batch(self, batch: ImageBatch):
        c, h, w = self.input_size
        if tuple(batch.shape[1:]) != (c, h, w):
            raise ValueError(
                f"target {self.identifier} expects {c}x{h}x{w} inputs, "
                f"got {tuple(batch.shape[1:])}"
            )


def extract_features(model: TargetModel, batch: ImageBatch, grad: bool = False) -> torch.Tensor:
    """N x feature_dim embeddings before the fully connected head."""
    model._check_batch(batch)
    if grad:
        return model.net.features(batch.data)
    with torch.no_grad():
        return model.net.features(batch.data)


def classify(model: TargetModel, batch: ImageBatch) -> LabelBatch:
    """Argmax class predictions. Classification targets only."""
    if model.task != "classification":
        raise ValueError(f"target {model.identifier} is a {model.task} model")
    model._check_batch(batch)
    with torch.no_grad():
        logits = model.net(batch.data)
    return LabelBatch(logits.argmax(dim=1))


@dataclass
class RetrievalIndex:
    """Gallery features and ids (plus optional camera ids) for ranking queries."""

    features: torch.Tensor  # G x D
    ids: torch.Tensor  # G
    camera_ids: torch.Tensor | None = None

    def __post_init__(self):
        if self.features.shape[0] != self.ids.numel():
            raise ValueError(
                f"{self.features.shape[0]} gallery features but {self.ids.numel()} ids"
            )
        if self.camera_ids is not None and self.camera_ids.numel() != self.ids.numel():
            raise ValueError("camera ids length does not match gallery size")

    def __len__(self) -> int:
        return self.ids.numel()


def rank_gallery(query: torch.Tensor, index: RetrievalIndex) -> torch.Tensor:
    """Per-query gallery indices by descending cosine similarity.

    Ties break by ascending gallery index (stable sort), so rankings are
    deterministic.
    """
    if len(index) == 0:
        raise ValueError("cannot rank an empty gallery")
    if query.shape[1] != index.features.shape[1]:
        raise ValueError(
            f"query dim {query.shape[1]} != gallery dim {index.features.shape[1]}"
        )
    q = torch.nn.functional.normalize(query, dim=1, eps=1e-12)
    g = torch.nn.functional.normalize(index.features, dim=1, eps=1e-12)
    sims = q @ g.T
    return torch.argsort(-sims, dim=1, stable=True)


def load_target(spec: dict) -> TargetModel:
    """Build a frozen handle from a registry entry.

    Expected keys: name, task, arch, weights (path), optional arch kwargs
    (num_classes / num_identities, width, feature_dim), optional input
    (size, mean, std).
    """
    arch = spec.get("arch")
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown target architecture {arch!r}; known: {sorted(ARCHITECTURES)}")
    kwargs = {
        k: spec[k]
        for k in ("num_classes", "num_identities", "width", "feature_dim")
        if k in spec
    }
    net = ARCHITECTURES[arch](**kwargs)
    weights = Path(spec["weights"])
    if not weights.exists():
        raise FileNotFoundError(f"target weights not found: {weights}")
    try:
        state = torch.load(weights, weights_only=True)
        net.load_state_dict(state)
    except Exception as exc:
        raise ValueError(f"corrupt or incompatible target weights at {weights}: {exc}") from exc

    inp = spec.get("input", {})
    size = inp.get("size", 32)
    norm = NormalizationSpec(
        mean=tuple(inp.get("mean", (0.5, 0.5, 0.5))),
        std=tuple(inp.get("std", (0.5, 0.5, 0.5))),
    )
    return TargetModel(
        identifier=spec["name"],
        task=spec["task"],
        net=net,
        input_size=(3, size, size),
        norm=norm,
    )


def train_reference_target(
    net: nn.Module,
    pixels: torch.Tensor,
    labels: torch.Tensor,
    norm: NormalizationSpec,
    epochs: int = 10,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
) -> nn.Module:
    """Train a desk reference network with Adam + cross-entropy.

    Deterministic for a fixed seed regardless of the RNG state at network
    construction: parameters are re-initialized under the seed first.
    """
    from advgen.tensors import to_normalized

    torch.manual_seed(seed)
    for module in net.modules():
        if hasattr(module, "reset_parameters"):
            module.reset_parameters()
    rng = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    data = to_normalized(pixels, norm).data
    n = data.shape[0]
    net.train()
    for _ in range(epochs):
        order = torch.randperm(n, generator=rng)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            loss = loss_fn(net(data[idx]), labels[idx])
            loss.backward()
            opt.step()
    net.eval()
    return net
