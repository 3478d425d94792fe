"""Command-line entry points: train, attack, eval, transfer, bench.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. A lock file
in the output directory prevents concurrent writers; existing outputs are
refused unless --overwrite is given.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import sys
from pathlib import Path

import numpy as np
import torch

from advgen.baselines import PGDConfig, fgsm, pgd
from advgen.config import ConfigError, RunConfig, dump_effective_config, load_run_config
from advgen.data import DatasetManifest, ingest_dataset, load_pixels
from advgen.evaluation import (
    EvalData,
    evaluate_attack,
    generator_attack_fn,
    throughput,
    transfer_matrix,
)
from advgen.generator import attack_batch, load_checkpoint
from advgen.reporting import (
    plot_loss_curve,
    save_image_png,
    write_attack_reports,
    write_transfer_cells,
)
from advgen.targets import (
    ARCHITECTURES,
    TargetModel,
    classify,
    load_target,
    train_reference_target,
)
from advgen.tensors import NormalizationSpec, tensor2img, to_normalized
from advgen.training import train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

LOCK_NAME = ".advgen.lock"

PERTURBATION_AMPLIFICATION = 10


@contextlib.contextmanager
def output_dir(path: str | Path, overwrite: bool):
    """Claim an output directory: refuse prior contents without overwrite,
    hold a lock file while writing."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    contents = [p for p in path.iterdir() if p.name != LOCK_NAME]
    if contents and not overwrite:
        raise ConfigError(
            f"output directory {path} is not empty; pass --overwrite to reuse it"
        )
    lock = path / LOCK_NAME
    try:
        lock.touch(exist_ok=False)
    except FileExistsError:
        raise RuntimeError(f"output directory {path} is locked by another writer")
    try:
        yield path
    finally:
        lock.unlink(missing_ok=True)


def _check_device(device: str):
    if device == "cpu":
        return
    if device.startswith("cuda") and torch.cuda.is_available():
        return
    raise ConfigError(f"--device {device!r} is not available on this machine")


def _target_norm(entry: dict) -> NormalizationSpec:
    inp = entry.get("input", {})
    return NormalizationSpec(
        mean=tuple(inp.get("mean", (0.5, 0.5, 0.5))),
        std=tuple(inp.get("std", (0.5, 0.5, 0.5))),
    )


def resolve_target(cfg: RunConfig, entry: dict, manifest: DatasetManifest) -> TargetModel:
    """Load a frozen target, training the desk reference weights first when
    the registry entry allows it and the weights file is absent."""
    entry = dict(entry)
    weights = Path(cfg.workdir) / entry["weights"]
    entry["weights"] = str(weights)
    if not weights.exists():
        if not entry.get("train_if_missing"):
            raise ConfigError(f"targets[{entry['name']}].weights: {weights} does not exist")
        arch = entry.get("arch")
        if arch not in ARCHITECTURES:
            raise ConfigError(f"targets[{entry['name']}].arch: unknown architecture {arch!r}")
        pixels, labels, _ = load_pixels(manifest, "train")
        kwargs = {
            k: entry[k]
            for k in ("num_classes", "num_identities", "width", "feature_dim")
            if k in entry
        }
        net = ARCHITECTURES[arch](**kwargs)
        opts = entry.get("train", {})
        train_reference_target(
            net,
            pixels,
            labels,
            _target_norm(entry),
            epochs=int(opts.get("epochs", 10)),
            lr=float(opts.get("lr", 1e-3)),
            seed=int(opts.get("seed", 0)),
        )
        weights.parent.mkdir(parents=True, exist_ok=True)
        torch.save(net.state_dict(), weights)
    return load_target(entry)


def eval_data_from_manifest(manifest: DatasetManifest, task: str, dataset_id: str) -> EvalData:
    if task == "classification":
        pixels, labels, _ = load_pixels(manifest, "test")
        return EvalData(dataset_id=dataset_id, task=task, pixels=pixels, labels=labels)
    qpix, qids, qcams = load_pixels(manifest, "query")
    gpix, gids, gcams = load_pixels(manifest, "gallery")
    return EvalData(
        dataset_id=dataset_id,
        task=task,
        query_pixels=qpix,
        query_ids=qids,
        query_cams=qcams,
        gallery_pixels=gpix,
        gallery_ids=gids,
        gallery_cams=gcams,
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg.train = replace(cfg.train, seed=args.seed)
    out = Path(args.out or cfg.output_dir)
    manifest = ingest_dataset(cfg.dataset, cfg.workdir)
    target = resolve_target(cfg, cfg.targets[0], manifest)
    pixels, _, _ = load_pixels(manifest, "train")
    with output_dir(out, args.overwrite):
        dump_effective_config(cfg, out / "effective_config.yaml")
        train(cfg.train, target, pixels, out_dir=out, dataset_id=manifest.name)
        plot_loss_curve(
            out / "loss_history.csv",
            out / "loss_curve.png",
            phase_boundary_epoch=cfg.train.epochs_phase1,
        )
    print(f"checkpoint and loss history written to {out}")
    return EXIT_OK


def _perturbation_png(pert_pixel_delta, amplification):
    """Signed pixel-space perturbation rendered around mid-gray."""
    return np.clip(0.5 + amplification * pert_pixel_delta, 0.0, 1.0)


def cmd_attack(args) -> int:
    cfg = load_run_config(args.config)
    model, _ = load_checkpoint(args.checkpoint)
    manifest = ingest_dataset(cfg.dataset, cfg.workdir)
    norm = _target_norm(cfg.targets[0])
    split = "test" if cfg.task == "classification" else "query"
    pixels, _, _ = load_pixels(manifest, split)
    with output_dir(Path(args.out), args.overwrite) as out:
        rows = []
        for i in range(pixels.shape[0]):
            batch = to_normalized(pixels[i : i + 1], norm)
            perturbed, pert, mask = attack_batch(model, batch)
            orig_px = tensor2img(batch)[0]
            adv_px = tensor2img(perturbed)[0]
            delta_px = (pert[0] * norm.std_tensor()[0]).numpy().transpose(1, 2, 0)
            stem = f"{i:05d}"
            save_image_png(orig_px.numpy(), out / f"{stem}_original.png")
            save_image_png(adv_px.numpy(), out / f"{stem}_perturbed.png")
            save_image_png(
                _perturbation_png(delta_px, PERTURBATION_AMPLIFICATION),
                out / f"{stem}_perturbation_x{PERTURBATION_AMPLIFICATION}.png",
            )
            save_image_png(_perturbation_png(delta_px, 1), out / f"{stem}_perturbation_x1.png")
            save_image_png(mask[0].numpy(), out / f"{stem}_saliency.png")
            rows.append((stem, float(pert.abs().max())))
        with open(out / "attack_index.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "max_abs_perturbation"])
            writer.writerows(rows)
    print(f"{pixels.shape[0]} attacked images exported to {args.out}")
    return EXIT_OK


def _load_attackers(checkpoints):
    attackers = []
    for path in checkpoints:
        model, manifest = load_checkpoint(path)
        attackers.append(
            {
                "model": model,
                "train_target": manifest.get("train_target", "unknown"),
                "train_dataset": manifest.get("train_dataset", "unknown"),
                "path": str(path),
            }
        )
    return attackers


def _resolve_eval_inputs(cfg: RunConfig):
    dataset_specs = cfg.eval.get("datasets") or [cfg.dataset]
    datasets = {}
    manifests = {}
    for spec in dataset_specs:
        manifest = ingest_dataset(spec, cfg.workdir)
        did = spec.get("name", manifest.name)
        task = spec.get("task", cfg.task)
        datasets[did] = eval_data_from_manifest(manifest, task, did)
        manifests[did] = manifest
    targets = {}
    for entry in cfg.targets:
        # Reference targets train on the first dataset matching their task.
        manifest = next(
            (m for d, m in manifests.items() if datasets[d].task == entry.get("task", cfg.task)),
            next(iter(manifests.values())),
        )
        targets[entry["name"]] = resolve_target(cfg, entry, manifest)
    return targets, datasets


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    targets, datasets = _resolve_eval_inputs(cfg)
    attackers = _load_attackers(args.checkpoint)
    reports = []
    for entry in attackers:
        for target in targets.values():
            for data in datasets.values():
                if data.task != target.task:
                    continue
                reports.append(
                    evaluate_attack(entry["model"], target, data, measure_fps=args.fps)
                )
    if not reports:
        raise RuntimeError("no (target, dataset) pair matched; nothing to evaluate")
    with output_dir(Path(args.out), args.overwrite) as out:
        write_attack_reports(reports, out)
    print(f"{len(reports)} attack reports written to {args.out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = load_run_config(args.config)
    targets, datasets = _resolve_eval_inputs(cfg)
    attackers = _load_attackers(args.checkpoint)
    for entry, meta in zip(attackers, args.trained_on or []):
        tid, _, did = meta.partition(":")
        entry["train_target"] = tid or entry["train_target"]
        entry["train_dataset"] = did or entry["train_dataset"]
    cells = transfer_matrix(attackers, targets, datasets, mode=args.mode)
    with output_dir(Path(args.out), args.overwrite) as out:
        write_transfer_cells(cells, out)
    print(f"{len(cells)} transfer cells written to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = load_run_config(args.config)
    targets, datasets = _resolve_eval_inputs(cfg)
    model, _ = load_checkpoint(args.checkpoint)
    data = next(d for d in datasets.values() if d.task == "classification")
    target = next(t for t in targets.values() if t.task == "classification")
    pixels = data.pixels

    # Baselines attack the predicted label of each batch (standard untargeted
    # form), so timings include their full query cost.
    def fgsm_fn(batch):
        return fgsm(target, batch, classify(target, batch), model.config.delta)

    pgd_cfg = PGDConfig(delta=model.config.delta, steps=args.pgd_steps)

    def pgd_fn(batch):
        return pgd(target, batch, classify(target, batch), pgd_cfg)

    rows = []
    for name, fn in (
        ("generator", generator_attack_fn(model, target)),
        ("fgsm", fgsm_fn),
        (f"pgd{args.pgd_steps}", pgd_fn),
    ):
        fps = [
            throughput(fn, pixels, norm=target.norm, batch_size=args.batch_size,
                       n_images=args.n_images)
            for _ in range(args.repeats)
        ]
        rows.append({"method": name, "fps_mean": float(np.mean(fps)),
                     "fps_runs": [float(f) for f in fps]})
    with output_dir(Path(args.out), args.overwrite) as out:
        with open(out / "bench.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "fps_mean"] + [f"run{i}" for i in range(args.repeats)])
            for row in rows:
                writer.writerow([row["method"], row["fps_mean"]] + row["fps_runs"])
        _plot_bench(rows, out / "bench.png")
    for row in rows:
        print(f"{row['method']}: {row['fps_mean']:.2f} images/s")
    return EXIT_OK


def _plot_bench(rows, path):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar([r["method"] for r in rows], [r["fps_mean"] for r in rows])
    ax.set_ylabel("images / second")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advgen",
        description="Generative adversarial attack toolkit: train the attacker, "
        "export adversarial images, evaluate and benchmark attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, multi_checkpoint=False):
        p.add_argument("--config", required=True, help="run config YAML")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--overwrite", action="store_true", help="reuse a non-empty output directory")
        p.add_argument("--seed", type=int, default=None, help="override the training seed")
        p.add_argument("--device", default="cpu", help="compute device (cpu)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="attacker checkpoint directory")
        if multi_checkpoint:
            p.add_argument(
                "--checkpoint", required=True, nargs="+", help="attacker checkpoint directories"
            )

    p = sub.add_parser("train", help="train the attacker against the first configured target")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="export perturbed images and saliency/perturbation maps")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="before/after attack reports for every target x dataset")
    common(p, multi_checkpoint=True)
    p.add_argument("--fps", action="store_true", help="also measure attack throughput")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="transfer matrix over models/datasets/tasks")
    common(p, multi_checkpoint=True)
    p.add_argument(
        "--mode",
        required=True,
        choices=["cross_model", "cross_dataset", "cross_both", "cross_task"],
    )
    p.add_argument(
        "--trained-on",
        nargs="*",
        help="per checkpoint: TARGET:DATASET it was trained against",
    )
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("bench", help="throughput comparison: generator vs FGSM vs PGD")
    common(p, checkpoint=True)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--n-images", type=int, default=200)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--pgd-steps", type=int, default=40)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _check_device(args.device)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
