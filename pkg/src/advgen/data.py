"""Dataset ingestion and the built-in synthetic desk-scale generators.

Three dataset sources: a class-per-folder image tree, a manifest CSV
(columns path,label,split[,camera]), and seeded synthetic generators that
materialize a 10-class texture-grating classification set or a 20-identity
retrieval set as PNGs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

SPLITS = ("train", "test", "query", "gallery")


@dataclass
class DatasetManifest:
    paths: list[str]
    labels: np.ndarray  # class ids or identity ids
    splits: list[str]
    camera_ids: np.ndarray | None = None
    name: str = "dataset"

    def __post_init__(self):
        if not self.paths:
            raise ValueError("dataset manifest is empty")
        if len(self.paths) != len(self.labels) or len(self.paths) != len(self.splits):
            raise ValueError("paths, labels, and splits must have equal length")
        if np.unique(self.labels).size < 2:
            raise ValueError("dataset must cover at least 2 classes/identities")
        missing = [p for p in self.paths if not Path(p).is_file()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} unreadable paths, first: {missing[0]}")

    def __len__(self) -> int:
        return len(self.paths)

    def subset(self, split: str) -> "DatasetManifest":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        if not idx:
            raise ValueError(f"no entries with split {split!r}")
        return DatasetManifest(
            paths=[self.paths[i] for i in idx],
            labels=self.labels[idx],
            splits=[split] * len(idx),
            camera_ids=None if self.camera_ids is None else self.camera_ids[idx],
            name=self.name,
        )


def load_pixels(manifest: DatasetManifest, split: str | None = None):
    """Load a manifest (or one split of it) into a pixel tensor and labels."""
    m = manifest.subset(split) if split else manifest
    images = []
    for p in m.paths:
        with Image.open(p) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        images.append(torch.from_numpy(arr).permute(2, 0, 1))
    pixels = torch.stack(images)
    labels = torch.from_numpy(np.asarray(m.labels, dtype=np.int64))
    return pixels, labels, m.camera_ids


# ---------------------------------------------------------------------------
# Synthetic generators


def _coords(size):
    ax = np.arange(size, dtype=np.float64)
    return np.meshgrid(ax, ax, indexing="ij")


GRATING_FREQUENCIES = (2, 3, 4, 5, 6)
GRATING_AMPLITUDE = 0.12
GRATING_NOISE_SIGMA = 0.10


def _draw_class(cls, rng, size=32):
    """One noisy sinusoidal grating; class = (orientation, frequency) pair.

    Classes 0-4 are horizontal gratings and 5-9 vertical ones, at five
    spatial frequencies. Phase, per-channel tint, and heavy pixel noise are
    random, so the class is carried by fine-grained texture rather than by
    large high-contrast structure.
    """
    if not 0 <= cls < 2 * len(GRATING_FREQUENCIES):
        raise ValueError(f"unknown class {cls}")
    yy, xx = _coords(size)
    freq = GRATING_FREQUENCIES[cls % len(GRATING_FREQUENCIES)]
    base = (xx if cls < len(GRATING_FREQUENCIES) else yy) / size
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wave = 0.5 + GRATING_AMPLITUDE * np.sin(2.0 * np.pi * freq * base + phase)
    img = np.repeat(wave[:, :, None], 3, axis=2)
    img *= rng.uniform(0.7, 1.0, size=3)[None, None, :]
    img += rng.normal(0.0, GRATING_NOISE_SIGMA, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_classification_arrays(n: int, seed: int, size: int = 32, num_classes: int = 10):
    """Balanced synthetic classification set: (pixels N x 3 x S x S, labels)."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % num_classes
    images = np.stack([_draw_class(int(c), rng, size) for c in labels])
    pixels = torch.from_numpy(images.astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    return pixels, torch.from_numpy(labels.astype(np.int64))


def _identity_signature(identity, seed, size):
    """Deterministic per-identity texture: block pattern + sinusoid + color.

    The sinusoidal component gives each identity a fine-grained frequency
    cue on top of the coarse block layout, so identities separate well under
    a small embedding network.
    """
    rng = np.random.default_rng((seed, identity))
    grid = rng.uniform(0.2, 1.0, size=(4, 4))
    blocks = np.kron(grid, np.ones((size // 4, size // 4)))
    yy, xx = _coords(size)
    freq = rng.uniform(2.0, 7.0)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    axis = (xx * np.cos(angle) + yy * np.sin(angle)) / size
    wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * axis + phase)
    pattern = 0.55 * blocks + 0.45 * wave
    color = rng.uniform(0.4, 1.0, size=3)
    return pattern, color


def _draw_identity(pattern, color, rng, camera, size):
    shift = rng.integers(-3, 4, size=2)
    tex = np.roll(pattern, tuple(shift), axis=(0, 1))
    img = tex[:, :, None] * color[None, None, :]
    img *= rng.uniform(0.8, 1.2)  # brightness jitter
    if camera == 1:  # mild color cast distinguishes the second camera
        img = img * np.array([1.0, 0.96, 0.92])[None, None, :]
    img += rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_retrieval_arrays(
    num_identities: int = 20,
    per_identity: int = 12,
    seed: int = 0,
    size: int = 32,
):
    """Synthetic retrieval set across two cameras.

    Returns (pixels, identity ids, camera ids, split tags). Per identity:
    the first 60% of samples are train (camera alternating), then queries
    (camera 0) and gallery items (camera 1), so every query has a
    cross-camera match.
    """
    rng = np.random.default_rng(seed)
    n_train = max(1, int(per_identity * 0.6))
    n_query = max(1, (per_identity - n_train) // 2)
    images, ids, cams, splits = [], [], [], []
    for identity in range(num_identities):
        pattern, color = _identity_signature(identity, seed, size)
        for k in range(per_identity):
            if k < n_train:
                split, camera = "train", k % 2
            elif k < n_train + n_query:
                split, camera = "query", 0
            else:
                split, camera = "gallery", 1
            images.append(_draw_identity(pattern, color, rng, camera, size))
            ids.append(identity)
            cams.append(camera)
            splits.append(split)
    pixels = torch.from_numpy(np.stack(images).astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    return (
        pixels,
        torch.tensor(ids, dtype=torch.int64),
        np.asarray(cams, dtype=np.int64),
        splits,
    )


def _write_png(path: Path, pixels: torch.Tensor):
    arr = (pixels.permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def materialize_synthetic(spec: dict, root: str | Path) -> DatasetManifest:
    """Write a synthetic dataset to disk (idempotent) and return its manifest."""
    root = Path(root)
    manifest_csv = root / "manifest.csv"
    if not manifest_csv.exists():
        root.mkdir(parents=True, exist_ok=True)
        kind = spec.get("type", "synthetic_classification")
        seed = int(spec.get("seed", 7))
        size = int(spec.get("size", 32))
        rows = []
        if kind == "synthetic_classification":
            n_train = int(spec.get("n_train", 5000))
            n_test = int(spec.get("n_test", 1000))
            pixels, labels = generate_classification_arrays(n_train + n_test, seed, size)
            for i in range(len(labels)):
                split = "train" if i < n_train else "test"
                name = f"{split}_{i:05d}_c{int(labels[i])}.png"
                _write_png(root / name, pixels[i])
                rows.append((name, int(labels[i]), split, ""))
        elif kind == "synthetic_retrieval":
            pixels, ids, cams, splits = generate_retrieval_arrays(
                num_identities=int(spec.get("num_identities", 20)),
                per_identity=int(spec.get("per_identity", 12)),
                seed=seed,
                size=size,
            )
            for i in range(len(ids)):
                name = f"{splits[i]}_{i:05d}_id{int(ids[i])}_cam{int(cams[i])}.png"
                _write_png(root / name, pixels[i])
                rows.append((name, int(ids[i]), splits[i], int(cams[i])))
        else:
            raise ValueError(f"unknown synthetic dataset type {kind!r}")
        with open(manifest_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label", "split", "camera"])
            writer.writerows(rows)
    return read_manifest_csv(manifest_csv, name=spec.get("name", "synthetic"))


def read_manifest_csv(path: str | Path, name: str | None = None) -> DatasetManifest:
    path = Path(path)
    paths, labels, splits, cams = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            paths.append(str(p))
            labels.append(int(row["label"]))
            splits.append(row["split"])
            cams.append(int(row["camera"]) if row.get("camera") else -1)
    camera_ids = np.asarray(cams)
    if (camera_ids < 0).all():
        camera_ids = None
    return DatasetManifest(
        paths=paths,
        labels=np.asarray(labels, dtype=np.int64),
        splits=splits,
        camera_ids=camera_ids,
        name=name or path.parent.name,
    )


def ingest_folder_tree(root: str | Path, split: str = "train", name: str | None = None) -> DatasetManifest:
    """Class-per-folder layout; labels follow alphabetical folder order."""
    root = Path(root)
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not classes:
        raise ValueError(f"no class folders under {root}")
    paths, labels = [], []
    skipped = 0
    for label, cls in enumerate(classes):
        for p in sorted((root / cls).iterdir()):
            if p.suffix.lower() not in (".png", ".jpg", ".jpeg", ".bmp"):
                skipped += 1
                continue
            paths.append(str(p))
            labels.append(label)
    if skipped:
        import warnings

        warnings.warn(f"skipped {skipped} non-image files under {root}")
    if not paths:
        raise ValueError(f"no images found under {root}")
    return DatasetManifest(
        paths=paths,
        labels=np.asarray(labels, dtype=np.int64),
        splits=[split] * len(paths),
        name=name or root.name,
    )


def ingest_dataset(spec: dict, workdir: str | Path = ".") -> DatasetManifest:
    """Resolve a dataset spec from a run config into a manifest."""
    kind = spec.get("type")
    if kind in ("synthetic_classification", "synthetic_retrieval"):
        root = Path(workdir) / spec.get("root", f"data/{kind}_{spec.get('seed', 7)}")
        return materialize_synthetic(spec, root)
    if kind == "manifest":
        return read_manifest_csv(Path(workdir) / spec["path"], name=spec.get("name"))
    if kind == "folder":
        return ingest_folder_tree(Path(workdir) / spec["path"], name=spec.get("name"))
    raise ValueError(f"unknown dataset type {kind!r}")
