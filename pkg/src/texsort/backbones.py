"""Classifier construction: pretrained convolutional base plus a pooled softmax head.

A classifier is a feature-extracting base (the "backbone") followed by global
average pooling and a single fully-connected projection to class logits.
Softmax is applied at prediction time; training uses the logits directly with
cross-entropy, which is numerically equivalent.

"Layers" for fine-tuning purposes are the parameter-bearing leaf modules of
the base, enumerated in registration order; unfreezing the top N layers means
making the trailing N entries of that sequence trainable. The enumerated names
are part of every model audit so the granularity choice is inspectable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .preprocess import PreprocessSpec

WEIGHTS_DIR_ENV = "TEXSORT_WEIGHTS_DIR"

# Fixed init for the in-tree tiny backbone: its seeded weights play the role
# of a published pretrained checkpoint.
_TINY_INIT_SEED = 0x7E25


class WeightsUnavailableError(RuntimeError):
    """Pretrained weights could not be loaded from cache or download."""


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    input_size: int  # square side, pixels
    unfreeze_top_layers: int
    pretrained_source: str = "imagenet"

    def preprocess_spec(self, crop_mode: str = "literal") -> PreprocessSpec:
        return PreprocessSpec(
            target_h=self.input_size, target_w=self.input_size, crop_mode=crop_mode
        )


BACKBONES: dict[str, BackboneSpec] = {
    "VGG16": BackboneSpec("VGG16", 224, 4),
    "VGG19": BackboneSpec("VGG19", 224, 6),
    "EfficientNetB0": BackboneSpec("EfficientNetB0", 224, 30),
    "EfficientNetV2S": BackboneSpec("EfficientNetV2S", 384, 30),
    "EfficientNetV2M": BackboneSpec("EfficientNetV2M", 480, 30),
    # Small convolutional stack for desk-scale runs and tests; no downloads.
    "TinyConv": BackboneSpec("TinyConv", 64, 2, pretrained_source="seeded"),
}


def get_backbone_spec(name: str) -> BackboneSpec:
    if name not in BACKBONES:
        raise ValueError(
            f"unknown backbone {name!r}; supported: {sorted(BACKBONES)}"
        )
    return BACKBONES[name]


@dataclass(frozen=True)
class ParamGroup:
    name: str
    tag: str  # "base" or "head"
    n_params: int


@dataclass(frozen=True)
class ModelAudit:
    groups: tuple[ParamGroup, ...]
    base_layer_names: tuple[str, ...]  # parameter-bearing base layers, in order

    @property
    def head_param_count(self) -> int:
        return sum(g.n_params for g in self.groups if g.tag == "head")

    @property
    def base_param_count(self) -> int:
        return sum(g.n_params for g in self.groups if g.tag == "base")


class TextileClassifier(nn.Module):
    """Backbone features -> global average pool -> linear logits."""

    def __init__(self, base: nn.Module, feature_width: int, num_classes: int):
        super().__init__()
        self.base = base
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(feature_width, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.base(x)
        pooled = self.pool(feats).flatten(1)
        return self.head(pooled)


def _tiny_base() -> nn.Module:
    gen = torch.Generator().manual_seed(_TINY_INIT_SEED)
    base = nn.Sequential(
        nn.Conv2d(3, 16, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(16, 24, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(24, 32, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(32, 48, 3, stride=2, padding=1),
        nn.ReLU(),
    )
    for p in base.parameters():
        if p.dim() > 1:
            # variance-preserving through the ReLU stack, so frozen features
            # keep a workable scale for the linear head
            nn.init.kaiming_uniform_(p, nonlinearity="relu", generator=gen)
        else:
            nn.init.uniform_(p, -0.05, 0.05, generator=gen)
    return base


def _torchvision_base(name: str, pretrained: bool) -> nn.Module:
    from torchvision import models

    builders = {
        "VGG16": (models.vgg16, "VGG16_Weights"),
        "VGG19": (models.vgg19, "VGG19_Weights"),
        "EfficientNetB0": (models.efficientnet_b0, "EfficientNet_B0_Weights"),
        "EfficientNetV2S": (models.efficientnet_v2_s, "EfficientNet_V2_S_Weights"),
        "EfficientNetV2M": (models.efficientnet_v2_m, "EfficientNet_V2_M_Weights"),
    }
    builder, weights_enum_name = builders[name]
    model = builder(weights=None)
    if pretrained:
        cache_dir = os.environ.get(WEIGHTS_DIR_ENV)
        cache_file = (
            os.path.join(cache_dir, f"{name}.pt") if cache_dir else None
        )
        if cache_file and os.path.isfile(cache_file):
            state = torch.load(cache_file, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        else:
            try:
                weights = getattr(models, weights_enum_name).IMAGENET1K_V1
                model = builder(weights=weights)
            except Exception as exc:
                raise WeightsUnavailableError(
                    f"pretrained weights for {name} unavailable (set "
                    f"{WEIGHTS_DIR_ENV} to a directory containing {name}.pt, "
                    f"or allow downloads): {exc}"
                ) from exc
    # all five torchvision architectures expose their conv stack as .features
    return model.features


def base_layer_sequence(base: nn.Module) -> list[tuple[str, nn.Module]]:
    """Parameter-bearing leaf modules of the base, in registration order."""
    layers = []
    for name, module in base.named_modules():
        if len(list(module.children())) == 0 and any(
            True for _ in module.parameters(recurse=False)
        ):
            layers.append((name, module))
    return layers


def build_model(
    spec: BackboneSpec, num_classes: int, pretrained: bool = True
) -> tuple[TextileClassifier, ModelAudit]:
    """Build a classifier from the backbone spec; returns (model, parameter audit).

    The backbone's original classifier is dropped; the new head is global
    average pooling plus a fully-connected layer sized by probing the base's
    feature width with a dummy forward pass.
    """
    if spec.name == "TinyConv":
        base = _tiny_base()
    elif spec.name in BACKBONES:
        base = _torchvision_base(spec.name, pretrained)
    else:
        raise ValueError(
            f"unknown backbone {spec.name!r}; supported: {sorted(BACKBONES)}"
        )
    base.eval()
    with torch.no_grad():
        dummy = torch.zeros(1, 3, spec.input_size, spec.input_size)
        feature_width = base(dummy).shape[1]
    model = TextileClassifier(base, feature_width, num_classes)
    groups = [
        ParamGroup(f"base.{name}", "base", p.numel())
        for name, p in model.base.named_parameters()
    ] + [
        ParamGroup(f"head.{name}", "head", p.numel())
        for name, p in model.head.named_parameters()
    ]
    audit = ModelAudit(
        groups=tuple(groups),
        base_layer_names=tuple(n for n, _ in base_layer_sequence(model.base)),
    )
    return model, audit


def set_phase1_trainable(model: TextileClassifier) -> list[str]:
    """Freeze the whole base; only the head trains. Returns unfrozen layer names."""
    for p in model.base.parameters():
        p.requires_grad_(False)
    for p in model.head.parameters():
        p.requires_grad_(True)
    return []


def set_phase2_trainable(model: TextileClassifier, top_layers: int) -> list[str]:
    """Unfreeze exactly the trailing ``top_layers`` base layers plus the head.

    Returns the names of the unfrozen base layers.
    """
    layers = base_layer_sequence(model.base)
    if top_layers > len(layers):
        top_layers = len(layers)
    for _, module in layers:
        for p in module.parameters(recurse=False):
            p.requires_grad_(False)
    unfrozen = layers[len(layers) - top_layers :] if top_layers > 0 else []
    for _, module in unfrozen:
        for p in module.parameters(recurse=False):
            p.requires_grad_(True)
    for p in model.head.parameters():
        p.requires_grad_(True)
    return [name for name, _ in unfrozen]


def predict(
    model: TextileClassifier, images: np.ndarray, batch_size: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """Per-image class probabilities and argmax labels.

    ``images`` is (N, H, W, 3) float32 already scaled to [-1, 1]. Outputs keep
    the input order; argmax ties break toward the lowest class index.
    """
    if images.ndim != 4 or images.shape[3] != 3:
        raise ValueError(f"expected (N, H, W, 3) images, got {images.shape}")
    model.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = torch.from_numpy(
                np.ascontiguousarray(
                    images[start : start + batch_size].transpose(0, 3, 1, 2)
                )
            )
            logits = model(batch)
            probs.append(torch.softmax(logits, dim=1).numpy())
    prob = (
        np.concatenate(probs, axis=0)
        if probs
        else np.zeros((0, model.head.out_features), dtype=np.float32)
    )
    return prob, prob.argmax(axis=1)
