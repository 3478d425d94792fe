"""Discriminator-free generative adversarial attack toolkit.

Trains a saliency-guided perturbation auto-encoder against frozen
recognition models and evaluates attack strength, perceptual quality,
throughput, and transferability on classification and retrieval tasks.
"""

from advgen.tensors import (
    AttackBudget,
    ImageBatch,
    LabelBatch,
    NormalizationSpec,
    tensor2img,
    to_normalized,
)

__all__ = [
    "AttackBudget",
    "ImageBatch",
    "LabelBatch",
    "NormalizationSpec",
    "tensor2img",
    "to_normalized",
]

__version__ = "0.1.0"
