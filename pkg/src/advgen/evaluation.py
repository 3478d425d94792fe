"""Attack evaluation: before/after task metrics, quality metrics, transfer, FPS.

Clean and attacked passes share the exact same preprocessing; quality metrics
are computed in pixel space after denormalization of both images, so they are
comparable across normalization specs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from advgen.generator import SaliencyAutoEncoder, attack_batch
from advgen.iqa import assess_pair, ms_ssim_scale_count
from advgen.metrics import accuracy, cmc_rank1, mean_average_precision
from advgen.targets import RetrievalIndex, TargetModel, classify, extract_features, rank_gallery
from advgen.tensors import ImageBatch, tensor2img, to_normalized

EVAL_BATCH = 128


@dataclass
class EvalData:
    """One evaluation split. Classification uses pixels/labels; retrieval uses
    the query/gallery fields."""

    dataset_id: str
    task: str
    pixels: torch.Tensor | None = None
    labels: torch.Tensor | None = None
    query_pixels: torch.Tensor | None = None
    query_ids: torch.Tensor | None = None
    query_cams: np.ndarray | None = None
    gallery_pixels: torch.Tensor | None = None
    gallery_ids: torch.Tensor | None = None
    gallery_cams: np.ndarray | None = None


@dataclass
class AttackReport:
    target_id: str
    dataset_id: str
    task: str
    clean: dict[str, float]
    attacked: dict[str, float]
    degradation: dict[str, float] = field(default_factory=dict)
    iqa: dict[str, float] = field(default_factory=dict)
    fps: float | None = None
    delta: float | None = None

    def __post_init__(self):
        for key in self.clean:
            expected = self.clean[key] - self.attacked[key]
            got = self.degradation.setdefault(key, expected)
            if abs(got - expected) > 1e-9:
                raise ValueError(f"degradation[{key}] != clean - attacked")


@dataclass
class TransferCell:
    train_target: str
    eval_target: str
    train_dataset: str
    eval_dataset: str
    clean: dict[str, float]
    attacked: dict[str, float]
    degradation: dict[str, float]


def _batches(pixels, size=EVAL_BATCH):
    for start in range(0, pixels.shape[0], size):
        yield pixels[start : start + size]


def perturb_pixels(model: SaliencyAutoEncoder, pixels: torch.Tensor, target: TargetModel):
    """Attack a pixel tensor and return (clean batch, perturbed batch) per chunk."""
    for chunk in _batches(pixels):
        batch = to_normalized(chunk, target.norm)
        perturbed, _, _ = attack_batch(model, batch)
        yield batch, perturbed


def _mean_iqa(pairs):
    """Average per-image quality metrics; infinities propagate (zero perturbation)."""
    keys = ("ssim", "ms_ssim", "psnr_standard_db", "psnr_doubled_db")
    acc = {k: [] for k in keys}
    scales = None
    for clean_px, adv_px in pairs:
        r = assess_pair(clean_px, adv_px)
        scales = r.ms_ssim_scales
        for k in keys:
            acc[k].append(getattr(r, k))
    out = {k: float(np.mean(v)) for k, v in acc.items()}
    out["ms_ssim_scales"] = scales
    return out


def _iqa_pairs(clean_batch: ImageBatch, adv_batch: ImageBatch):
    clean_px = tensor2img(clean_batch).permute(0, 2, 3, 1).numpy()
    adv_px = tensor2img(adv_batch).permute(0, 2, 3, 1).numpy()
    return list(zip(clean_px, adv_px))


def evaluate_attack(
    model: SaliencyAutoEncoder,
    target: TargetModel,
    data: EvalData,
    measure_fps: bool = False,
) -> AttackReport:
    if data.task != target.task:
        raise ValueError(
            f"dataset task {data.task!r} does not match target task {target.task!r}"
        )
    if target.task == "classification":
        report = _evaluate_classification(model, target, data)
    else:
        report = _evaluate_retrieval(model, target, data)
    if measure_fps:
        pixels = data.pixels if data.pixels is not None else data.query_pixels
        report.fps = throughput(generator_attack_fn(model, target), pixels)
    return report


def _evaluate_classification(model, target, data) -> AttackReport:
    clean_preds, adv_preds, pairs = [], [], []
    for clean_batch, adv_batch in perturb_pixels(model, data.pixels, target):
        clean_preds.append(classify(target, clean_batch).values)
        adv_preds.append(classify(target, adv_batch).values)
        pairs.extend(_iqa_pairs(clean_batch, adv_batch))
    clean_acc = accuracy(torch.cat(clean_preds).numpy(), data.labels.numpy())
    adv_acc = accuracy(torch.cat(adv_preds).numpy(), data.labels.numpy())
    return AttackReport(
        target_id=target.identifier,
        dataset_id=data.dataset_id,
        task="classification",
        clean={"accuracy": clean_acc},
        attacked={"accuracy": adv_acc},
        iqa=_mean_iqa(pairs),
        delta=model.config.delta,
    )


def _gallery_index(target, data) -> RetrievalIndex:
    feats = torch.cat(
        [
            extract_features(target, to_normalized(chunk, target.norm))
            for chunk in _batches(data.gallery_pixels)
        ]
    )
    cams = None if data.gallery_cams is None else torch.from_numpy(np.asarray(data.gallery_cams))
    return RetrievalIndex(features=feats, ids=data.gallery_ids, camera_ids=cams)


def _retrieval_scores(rankings, data):
    kwargs = {}
    if data.query_cams is not None and data.gallery_cams is not None:
        kwargs = {"query_cams": data.query_cams, "gallery_cams": data.gallery_cams}
    r1 = cmc_rank1(rankings, data.query_ids.numpy(), data.gallery_ids.numpy(), **kwargs)
    ap = mean_average_precision(rankings, data.query_ids.numpy(), data.gallery_ids.numpy(), **kwargs)
    return {"rank1": r1, "map": ap}


def _evaluate_retrieval(model, target, data) -> AttackReport:
    """Queries are attacked; the gallery stays clean (the indexed database is
    outside the attacker's reach)."""
    index = _gallery_index(target, data)
    clean_feats, adv_feats, pairs = [], [], []
    for clean_batch, adv_batch in perturb_pixels(model, data.query_pixels, target):
        clean_feats.append(extract_features(target, clean_batch))
        adv_feats.append(extract_features(target, adv_batch))
        pairs.extend(_iqa_pairs(clean_batch, adv_batch))
    clean_rank = rank_gallery(torch.cat(clean_feats), index).numpy()
    adv_rank = rank_gallery(torch.cat(adv_feats), index).numpy()
    return AttackReport(
        target_id=target.identifier,
        dataset_id=data.dataset_id,
        task="retrieval",
        clean=_retrieval_scores(clean_rank, data),
        attacked=_retrieval_scores(adv_rank, data),
        iqa=_mean_iqa(pairs),
        delta=model.config.delta,
    )


TRANSFER_MODES = ("cross_model", "cross_dataset", "cross_both", "cross_task")


def transfer_matrix(
    attackers: list[dict],
    targets: dict[str, TargetModel],
    datasets: dict[str, EvalData],
    mode: str,
) -> list[TransferCell]:
    """Evaluate fixed attackers over (model, dataset) pairs without retraining.

    Each attacker entry carries model, train_target, train_dataset. Pairs
    whose dataset task does not match the target task are skipped.
    """
    if mode not in TRANSFER_MODES:
        raise ValueError(f"unknown transfer mode {mode!r}; known: {TRANSFER_MODES}")
    cells = []
    for entry in attackers:
        model = entry["model"]
        train_target = entry["train_target"]
        train_dataset = entry["train_dataset"]
        if mode == "cross_model":
            pairs = [(tid, train_dataset) for tid in targets]
        elif mode == "cross_dataset":
            pairs = [(train_target, did) for did in datasets]
        else:
            pairs = [(tid, did) for tid in targets for did in datasets]
        for tid, did in pairs:
            target = targets[tid]
            data = datasets[did]
            if data.task != target.task:
                continue
            report = evaluate_attack(model, target, data)
            cells.append(
                TransferCell(
                    train_target=train_target,
                    eval_target=tid,
                    train_dataset=train_dataset,
                    eval_dataset=did,
                    clean=report.clean,
                    attacked=report.attacked,
                    degradation=report.degradation,
                )
            )
    return cells


def generator_attack_fn(model: SaliencyAutoEncoder, target: TargetModel):
    """Attacker-only timing path: one forward pass, no target queries."""

    def fn(batch: ImageBatch) -> ImageBatch:
        perturbed, _, _ = attack_batch(model, batch)
        return perturbed

    return fn


def throughput(
    attack_fn,
    pixels: torch.Tensor,
    norm=None,
    batch_size: int = 1,
    n_images: int = 200,
    warmup: int = 20,
) -> float:
    """Wall-clock images/second over >= n_images after a warm-up pass."""
    from advgen.tensors import NormalizationSpec

    norm = norm or NormalizationSpec()
    total = pixels.shape[0]
    batches = [
        to_normalized(pixels[i % total : i % total + batch_size].clamp(0, 1), norm)
        for i in range(0, warmup + n_images, batch_size)
    ]
    n_warm = math.ceil(warmup / batch_size)
    for batch in batches[:n_warm]:
        attack_fn(batch)
    timed = batches[n_warm:]
    count = sum(b.shape[0] for b in timed)
    start = time.perf_counter()
    for batch in timed:
        attack_fn(batch)
    elapsed = time.perf_counter() - start
    return count / elapsed
