"""Detector and segmenter backends.

Deterministic stubs (ground-truth replay, box dilation, box fill, mask
dilation) make the full pipeline and its metrics testable with no model
downloads. Adapters for real open-vocabulary detection / promptable
segmentation models load weights from local paths.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .backbones import WEIGHTS_DIR_ENV
from .metrics import box_iou
from .zeroshot import BackendError, DetectedBox, InstanceMask, Scene


def _require_gt(scene: Scene, backend: str):
    if not scene.gt:
        raise BackendError(
            f"{backend} stub needs ground-truth instances, but image "
            f"{scene.id!r} has none"
        )
    return scene.gt


@dataclass(frozen=True)
class ReplayDetector:
    """Returns the scene's ground-truth boxes at a fixed confidence."""

    confidence: float = 0.9

    def detect(self, scene, prompts, cfg):
        out = []
        for inst in _require_gt(scene, "replay detector"):
            if inst.label in prompts.prompts:
                out.append(
                    DetectedBox(inst.label, self.confidence, tuple(inst.box))
                )
        return out


@dataclass(frozen=True)
class BoxDilationDetector:
    """Ground-truth boxes inflated by ``dilation`` px, clamped to the image."""

    dilation: int = 4
    confidence: float = 0.9

    def detect(self, scene, prompts, cfg):
        h, w = scene.dims
        d = self.dilation
        out = []
        for inst in _require_gt(scene, "box-dilation detector"):
            if inst.label not in prompts.prompts:
                continue
            x1, y1, x2, y2 = inst.box
            out.append(
                DetectedBox(
                    inst.label,
                    self.confidence,
                    (max(0, x1 - d), max(0, y1 - d), min(w, x2 + d), min(h, y2 + d)),
                )
            )
        return out


def _best_gt_for_box(scene: Scene, box: DetectedBox, backend: str):
    best = None
    best_iou = -1.0
    for inst in _require_gt(scene, backend):
        if inst.label != box.label:
            continue
        v = box_iou(inst.box, box.box)
        if v > best_iou:
            best_iou = v
            best = inst
    if best is None:
        raise BackendError(
            f"{backend} stub found no ground-truth instance labelled "
            f"{box.label!r} on image {scene.id!r}"
        )
    return best


@dataclass(frozen=True)
class ReplaySegmenter:
    """For each box, returns the mask of the best-overlapping ground-truth
    instance with the same label."""

    def segment(self, scene, boxes):
        out = []
        for box in boxes:
            inst = _best_gt_for_box(scene, box, "replay segmenter")
            out.append(InstanceMask(box.label, inst.mask.copy(), box))
        return out


@dataclass(frozen=True)
class MaskDilationSegmenter:
    """Ground-truth masks morphologically dilated by ``dilation`` steps."""

    dilation: int = 4

    def segment(self, scene, boxes):
        out = []
        for box in boxes:
            inst = _best_gt_for_box(scene, box, "mask-dilation segmenter")
            mask = inst.mask
            if self.dilation > 0:
                mask = ndimage.binary_dilation(mask, iterations=self.dilation)
            out.append(InstanceMask(box.label, mask, box))
        return out


@dataclass(frozen=True)
class BoxFillSegmenter:
    """Fills each prompt box completely."""

    def segment(self, scene, boxes):
        h, w = scene.dims
        out = []
        for box in boxes:
            mask = np.zeros((h, w), dtype=bool)
            x1, y1, x2, y2 = box.box
            mask[y1:y2, x1:x2] = True
            out.append(InstanceMask(box.label, mask, box))
        return out


def _resolve_weights(path_value: str | None, kind: str) -> Path:
    if path_value is None:
        raise BackendError(
            f"{kind} backend needs a 'weights' path (or set {WEIGHTS_DIR_ENV})"
        )
    path = Path(path_value)
    if not path.is_absolute():
        cache = os.environ.get(WEIGHTS_DIR_ENV)
        if cache:
            path = Path(cache) / path
    if not path.exists():
        raise BackendError(f"{kind} weights not found at {path}")
    return path


class GroundingDinoDetector:
    """Open-vocabulary text-prompted detector loaded from a local checkpoint."""

    def __init__(self, weights: str | None = None):
        self._weights = _resolve_weights(weights, "open-vocabulary detector")
        try:
            from transformers import AutoModelForZeroShotObjectDetection, AutoProcessor
        except ImportError as exc:
            raise BackendError(
                "transformers is required for the real detector backend"
            ) from exc
        self._processor = AutoProcessor.from_pretrained(self._weights)
        self._model = AutoModelForZeroShotObjectDetection.from_pretrained(
            self._weights
        )
        self._model.eval()

    def detect(self, scene, prompts, cfg):
        import torch

        text = ". ".join(prompts.prompts) + "."
        inputs = self._processor(
            images=scene.image, text=text, return_tensors="pt"
        )
        with torch.no_grad():
            outputs = self._model(**inputs)
        h, w = scene.dims
        kwargs = {"threshold": cfg.box_confidence_threshold}
        if cfg.text_threshold is not None:
            kwargs["text_threshold"] = cfg.text_threshold
        results = self._processor.post_process_grounded_object_detection(
            outputs,
            inputs["input_ids"],
            target_sizes=[(h, w)],
            **kwargs,
        )[0]
        out = []
        for label, score, box in zip(
            results["labels"], results["scores"], results["boxes"]
        ):
            x1, y1, x2, y2 = (int(round(float(v))) for v in box)
            x1, y1 = max(0, x1), max(0, y1)
            x2, y2 = min(w, max(x2, x1 + 1)), min(h, max(y2, y1 + 1))
            out.append(DetectedBox(str(label), float(score), (x1, y1, x2, y2)))
        return out


class SamSegmenter:
    """Promptable segmenter loaded from a local checkpoint; prompts are boxes.
    When the model proposes several masks per box the highest-scoring one wins.
    """

    def __init__(self, weights: str | None = None):
        self._weights = _resolve_weights(weights, "promptable segmenter")
        try:
            from transformers import SamModel, SamProcessor
        except ImportError as exc:
            raise BackendError(
                "transformers is required for the real segmenter backend"
            ) from exc
        self._processor = SamProcessor.from_pretrained(self._weights)
        self._model = SamModel.from_pretrained(self._weights)
        self._model.eval()

    def segment(self, scene, boxes):
        import torch

        input_boxes = [[list(map(float, b.box)) for b in boxes]]
        inputs = self._processor(
            scene.image, input_boxes=input_boxes, return_tensors="pt"
        )
        with torch.no_grad():
            outputs = self._model(**inputs)
        masks = self._processor.image_processor.post_process_masks(
            outputs.pred_masks,
            inputs["original_sizes"],
            inputs["reshaped_input_sizes"],
        )[0]
        scores = outputs.iou_scores[0]
        out = []
        for i, box in enumerate(boxes):
            best = int(scores[i].argmax())
            mask = masks[i, best].numpy().astype(bool)
            out.append(InstanceMask(box.label, mask, box))
        return out


_DETECTOR_KINDS = ("gt_replay", "box_dilation", "grounding_dino")
_SEGMENTER_KINDS = ("gt_replay", "mask_dilation", "box_fill", "sam")


def build_detector(spec: dict):
    """Construct a detector backend from its config dict ({'kind': ..., ...})."""
    kind = spec.get("kind")
    if kind == "gt_replay":
        return ReplayDetector(confidence=float(spec.get("confidence", 0.9)))
    if kind == "box_dilation":
        return BoxDilationDetector(
            dilation=int(spec.get("dilation", 4)),
            confidence=float(spec.get("confidence", 0.9)),
        )
    if kind == "grounding_dino":
        return GroundingDinoDetector(weights=spec.get("weights"))
    raise ValueError(
        f"unknown detector kind {kind!r}; supported: {list(_DETECTOR_KINDS)}"
    )


def build_segmenter(spec: dict):
    """Construct a segmenter backend from its config dict."""
    kind = spec.get("kind")
    if kind == "gt_replay":
        return ReplaySegmenter()
    if kind == "mask_dilation":
        return MaskDilationSegmenter(dilation=int(spec.get("dilation", 4)))
    if kind == "box_fill":
        return BoxFillSegmenter()
    if kind == "sam":
        return SamSegmenter(weights=spec.get("weights"))
    raise ValueError(
        f"unknown segmenter kind {kind!r}; supported: {list(_SEGMENTER_KINDS)}"
    )
