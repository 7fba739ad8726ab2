"""Run configuration: one strict JSON document drives every command.

Unknown keys are rejected (with their dotted paths) and all validation
problems are reported together, before any side effects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backbones import BACKBONES
from .preprocess import AugmentConfig
from .training import TrainConfig
from .zeroshot import TextPromptSet, ZeroShotConfig


class ConfigError(ValueError):
    """Aggregated configuration problems."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))


@dataclass
class FoldSettings:
    k: int = 5
    seed: int | None = None  # defaults to the run seed


@dataclass
class RunConfig:
    manifest: Path | None = None
    backbone: str = "TinyConv"
    seed: int = 0
    out_dir: Path | None = None
    deterministic: bool = False
    crop_mode: str = "literal"
    pretrained: bool = True
    folds: FoldSettings = field(default_factory=FoldSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    prompts: TextPromptSet = field(default_factory=TextPromptSet)
    zeroshot: ZeroShotConfig = field(default_factory=ZeroShotConfig)
    detector: dict = field(default_factory=lambda: {"kind": "gt_replay"})
    segmenter: dict = field(default_factory=lambda: {"kind": "gt_replay"})

    @property
    def fold_seed(self) -> int:
        return self.folds.seed if self.folds.seed is not None else self.seed


def _build_section(cls, raw: dict, prefix: str, errors: list[str]):
    """Instantiate a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(raw, dict):
        errors.append(f"{prefix.rstrip('.')} must be an object, got {type(raw).__name__}")
        return None
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    for key in sorted(unknown):
        errors.append(f"unknown key {prefix}{key!r}")
    kwargs = {k: v for k, v in raw.items() if k in known}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{prefix.rstrip('.') or 'config'}: {exc}")
        return None


_TOP_KEYS = {
    "manifest",
    "backbone",
    "seed",
    "out_dir",
    "deterministic",
    "crop_mode",
    "pretrained",
    "folds",
    "train",
    "augment",
    "prompts",
    "zeroshot",
    "detector",
    "segmenter",
}

_DETECTOR_KEYS = {
    "gt_replay": {"kind", "confidence"},
    "box_dilation": {"kind", "confidence", "dilation"},
    "grounding_dino": {"kind", "weights"},
}
_SEGMENTER_KEYS = {
    "gt_replay": {"kind"},
    "mask_dilation": {"kind", "dilation"},
    "box_fill": {"kind"},
    "sam": {"kind", "weights"},
}


def _check_backend(raw: dict, allowed: dict[str, set], prefix: str, errors: list[str]):
    kind = raw.get("kind")
    if kind not in allowed:
        errors.append(
            f"{prefix}kind must be one of {sorted(allowed)}, got {kind!r}"
        )
        return
    for key in sorted(set(raw) - allowed[kind]):
        errors.append(f"unknown key {prefix}{key!r}")


def parse_run_config(source: dict | str | Path, base_dir: Path | None = None) -> RunConfig:
    """Parse and validate a config dict or JSON file; raises ConfigError with
    every problem found. Relative paths resolve against the config file's
    directory (or ``base_dir``)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise ConfigError([f"config file not found: {path}"])
        base_dir = base_dir or path.parent
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"])
    else:
        raw = dict(source)
        base_dir = base_dir or Path.cwd()
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])

    errors: list[str] = []
    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"unknown key {key!r}")

    cfg = RunConfig()
    if "backbone" in raw:
        if raw["backbone"] not in BACKBONES:
            errors.append(
                f"backbone must be one of {sorted(BACKBONES)}, got {raw['backbone']!r}"
            )
        else:
            cfg.backbone = raw["backbone"]
    if "seed" in raw:
        if not isinstance(raw["seed"], int):
            errors.append(f"seed must be an integer, got {raw['seed']!r}")
        else:
            cfg.seed = raw["seed"]
    if "deterministic" in raw:
        if not isinstance(raw["deterministic"], bool):
            errors.append("deterministic must be a boolean")
        else:
            cfg.deterministic = raw["deterministic"]
    if "pretrained" in raw:
        if not isinstance(raw["pretrained"], bool):
            errors.append("pretrained must be a boolean")
        else:
            cfg.pretrained = raw["pretrained"]
    if "crop_mode" in raw:
        if raw["crop_mode"] not in ("literal", "square"):
            errors.append(
                f"crop_mode must be 'literal' or 'square', got {raw['crop_mode']!r}"
            )
        else:
            cfg.crop_mode = raw["crop_mode"]
    if "manifest" in raw and raw["manifest"] is not None:
        cfg.manifest = (base_dir / raw["manifest"]).resolve()
    if "out_dir" in raw and raw["out_dir"] is not None:
        cfg.out_dir = (base_dir / raw["out_dir"]).resolve()

    if "folds" in raw:
        built = _build_section(FoldSettings, raw["folds"], "folds.", errors)
        if built is not None:
            if built.k < 2:
                errors.append(f"folds.k must be >= 2, got {built.k}")
            else:
                cfg.folds = built
    if "train" in raw:
        built = _build_section(TrainConfig, raw["train"], "train.", errors)
        if built is not None:
            cfg.train = built
    if "augment" in raw:
        if raw["augment"] is None:
            cfg.augment = None
        else:
            built = _build_section(AugmentConfig, raw["augment"], "augment.", errors)
            if built is not None:
                cfg.augment = built
    if "prompts" in raw:
        try:
            cfg.prompts = TextPromptSet(tuple(raw["prompts"]))
        except (TypeError, ValueError) as exc:
            errors.append(f"prompts: {exc}")
    if "zeroshot" in raw:
        built = _build_section(ZeroShotConfig, raw["zeroshot"], "zeroshot.", errors)
        if built is not None:
            cfg.zeroshot = built
    if "detector" in raw:
        if not isinstance(raw["detector"], dict):
            errors.append("detector must be an object with a 'kind' key")
        else:
            _check_backend(raw["detector"], _DETECTOR_KEYS, "detector.", errors)
            cfg.detector = dict(raw["detector"])
    if "segmenter" in raw:
        if not isinstance(raw["segmenter"], dict):
            errors.append("segmenter must be an object with a 'kind' key")
        else:
            _check_backend(raw["segmenter"], _SEGMENTER_KEYS, "segmenter.", errors)
            cfg.segmenter = dict(raw["segmenter"])

    if errors:
        raise ConfigError(errors)
    return cfg
