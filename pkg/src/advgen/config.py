"""Run configuration: a single YAML file with defaults pre-filled.

A minimal config names only the dataset and one target; training
hyperparameters default to the stock schedule (20+20 epochs, batch 16,
Adam at 1e-5, alpha 1e-4, delta 0.1). The effective, defaults-resolved
config is written next to every run's outputs so a run can be reproduced
from it alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from advgen.training import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass
class RunConfig:
    task: str
    dataset: dict
    targets: list[dict]
    train: TrainConfig
    output_dir: str
    eval: dict = field(default_factory=dict)
    workdir: str = "."

    def target_by_name(self, name: str) -> dict:
        for entry in self.targets:
            if entry["name"] == name:
                return entry
        raise ConfigError(f"targets: no target named {name!r}")


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return parse_run_config(raw, workdir=path.parent)


def parse_run_config(raw: dict, workdir: str | Path = ".") -> RunConfig:
    workdir = Path(workdir)
    task = raw.get("task", "classification")
    if task not in ("classification", "retrieval"):
        raise ConfigError(f"task: must be classification or retrieval, got {task!r}")

    dataset = _require(raw, "dataset", "config")
    if "type" not in dataset:
        raise ConfigError("dataset: missing required key 'type'")
    if dataset["type"] in ("folder", "manifest"):
        ds_path = workdir / _require(dataset, "path", "dataset")
        if not ds_path.exists():
            raise ConfigError(f"dataset.path: {ds_path} does not exist")

    targets = _require(raw, "targets", "config")
    if not targets:
        raise ConfigError("targets: at least one target is required")
    names = [
        _require(t, "name", f"targets[{i}]") for i, t in enumerate(targets)
    ]
    if len(set(names)) != len(names):
        raise ConfigError("targets: names must be unique")
    for i, t in enumerate(targets):
        _require(t, "arch", f"targets[{i}]")
        t.setdefault("task", task)
        _require(t, "weights", f"targets[{i}]")

    try:
        train = TrainConfig(**raw.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc

    output_dir = raw.get("output_dir", "runs/run")
    return RunConfig(
        task=task,
        dataset=dataset,
        targets=targets,
        train=train,
        output_dir=str(output_dir),
        eval=raw.get("eval", {}),
        workdir=str(workdir),
    )


def dump_effective_config(cfg: RunConfig, path: str | Path):
    """Write the defaults-resolved config; re-running from it reproduces results."""
    payload = {
        "task": cfg.task,
        "dataset": cfg.dataset,
        "targets": cfg.targets,
        "train": asdict(cfg.train),
        "eval": cfg.eval,
        "output_dir": cfg.output_dir,
    }
    Path(path).write_text(yaml.safe_dump(payload, sort_keys=False))
