"""Run configuration: a YAML key-value tree with strict key validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .distill import DistillConfig
from .prompts import PromptConfig
from .student import StudentConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Invalid run config; the message names the offending key path."""


@dataclass
class DatasetSection:
    # exactly one of (node_file + edge_file) or synth
    node_file: Optional[str] = None
    edge_file: Optional[str] = None
    synth: Optional[dict] = None
    split_ratios: tuple[float, float, float] = (6, 2, 2)
    seed: int = 0


@dataclass
class TeacherSection:
    mode: str = "mock"            # "file" or "mock"
    path: Optional[str] = None
    d_l: int = 64
    theta: int = 2
    signal: float = 4.0
    noise: float = 0.5
    seed: int = 0


@dataclass
class RunConfig:
    dataset: DatasetSection
    prompt: dict = field(default_factory=dict)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    student: StudentConfig = field(default_factory=StudentConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"
    raw: dict = field(default_factory=dict, repr=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self, base: Optional[str] = None) -> Path:
        return Path(base or self.out_dir) / f"run-{self.config_hash()}"


_SECTION_KEYS = {
    "dataset": {"node_file", "edge_file", "synth", "split_ratios", "seed"},
    "synth": {"n", "classes", "homophily", "d_in", "signal", "noise",
              "avg_degree", "seed"},
    "prompt": {"k", "theta", "s_max", "graph_type", "categories", "criteria",
               "seed"},
    "teacher": {"mode", "path", "d_l", "theta", "signal", "noise", "seed"},
    "student": {"arch", "k", "d_in", "d_g", "seed"},
    "distill": {"t", "n_negatives", "similarity", "denominator_mode",
                "gamma_mode", "seed"},
    "train": {"lr", "batch", "epochs", "alpha", "beta", "loss_weight_mode",
              "betas", "eps", "weight_decay", "distill_layers",
              "teacher_activation", "eval_every", "seed"},
}
_TOP_KEYS = {"dataset", "prompt", "teacher", "student", "distill", "train",
             "out_dir"}


def _check_keys(mapping: dict, allowed: set[str], path: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}.{key}"
                              if path else f"unknown config key: {key}")


def load_config(path: str | Path, seed_override: Optional[int] = None,
                out_override: Optional[str] = None) -> RunConfig:
    with Path(path).open("r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, _TOP_KEYS, "")
    for section, allowed in _SECTION_KEYS.items():
        if section in ("synth",):
            continue
        sub = raw.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        _check_keys(sub, allowed, section)
    ds_raw: dict[str, Any] = dict(raw.get("dataset") or {})
    if ds_raw.get("synth") is not None:
        _check_keys(ds_raw["synth"], _SECTION_KEYS["synth"], "dataset.synth")

    has_files = ds_raw.get("node_file") is not None
    has_synth = ds_raw.get("synth") is not None
    if has_files == has_synth:
        raise ConfigError(
            "dataset section needs exactly one of node_file/edge_file or synth")
    if has_files and ds_raw.get("edge_file") is None:
        raise ConfigError("dataset.edge_file is required with dataset.node_file")
    if "split_ratios" in ds_raw:
        ds_raw["split_ratios"] = tuple(ds_raw["split_ratios"])

    teacher_raw = dict(raw.get("teacher") or {})
    teacher = TeacherSection(**teacher_raw)
    if teacher.mode not in ("file", "mock"):
        raise ConfigError("teacher.mode must be 'file' or 'mock'")
    if teacher.mode == "file" and not teacher.path:
        raise ConfigError("teacher.path is required in file mode")

    train_raw = dict(raw.get("train") or {})
    if "betas" in train_raw:
        train_raw["betas"] = tuple(train_raw["betas"])
    distill = DistillConfig(**(raw.get("distill") or {}))
    train_cfg = TrainConfig(distill=distill, **train_raw)

    if seed_override is not None:
        train_cfg.seed = seed_override
        raw = dict(raw)
        raw.setdefault("train", {})
        raw["train"] = dict(raw["train"])
        raw["train"]["seed"] = seed_override

    return RunConfig(
        dataset=DatasetSection(**ds_raw),
        prompt=dict(raw.get("prompt") or {}),
        teacher=teacher,
        student=StudentConfig(**(raw.get("student") or {})),
        distill=distill,
        train=train_cfg,
        out_dir=out_override or raw.get("out_dir", "runs"),
        raw=raw,
    )
