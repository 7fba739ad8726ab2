"""Zero-shot contaminant localization: text-prompted detection produces boxes,
boxes prompt a segmenter to produce masks. Backends are pluggable and never
trained here; deterministic stubs live in `texsort.backends`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .dataset import GroundTruthInstance

# Segmenters may bleed slightly past the prompt box; set pixels must stay
# within this band around the source box.
DEFAULT_MASK_BLEED_BAND = 8


class BackendError(RuntimeError):
    """A detector or segmenter backend failed or broke its contract."""


@dataclass(frozen=True)
class TextPromptSet:
    prompts: tuple[str, ...] = ("button", "zipper")

    def __post_init__(self) -> None:
        if not self.prompts:
            raise ValueError("prompt set must be non-empty")
        if len(set(self.prompts)) != len(self.prompts):
            raise ValueError(f"prompt labels must be unique, got {self.prompts}")


@dataclass(frozen=True)
class DetectedBox:
    label: str
    confidence: float
    box: tuple[int, int, int, int]  # [x1, y1, x2, y2), pixel coords

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {self.box}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class InstanceMask:
    label: str
    mask: np.ndarray  # bool, image dims
    source_box: DetectedBox


@dataclass(frozen=True)
class ZeroShotConfig:
    box_confidence_threshold: float = 0.35
    # detector-internal text-similarity cutoff; None keeps the backend default
    text_threshold: float | None = None
    mask_bleed_band: int = DEFAULT_MASK_BLEED_BAND


@dataclass
class Scene:
    """One image to analyze, with optional ground truth for stubs/evaluation."""

    id: str
    image: np.ndarray  # uint8 (h, w, 3)
    gt: list[GroundTruthInstance] = field(default_factory=list)

    @property
    def dims(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


class DetectorBackend(Protocol):
    def detect(
        self, scene: Scene, prompts: TextPromptSet, cfg: ZeroShotConfig
    ) -> list[DetectedBox]: ...


class SegmenterBackend(Protocol):
    def segment(self, scene: Scene, boxes: Sequence[DetectedBox]) -> list[InstanceMask]: ...


def _check_box_in_bounds(box: DetectedBox, dims: tuple[int, int], image_id: str) -> None:
    h, w = dims
    x1, y1, x2, y2 = box.box
    if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
        raise BackendError(
            f"detector returned out-of-bounds box {box.box} for image {image_id!r} "
            f"of dims {(h, w)}"
        )


def detect_features(
    scene: Scene,
    prompts: TextPromptSet,
    cfg: ZeroShotConfig,
    detector: DetectorBackend,
) -> list[DetectedBox]:
    """Run the detector and return confidence-filtered boxes in canonical order:
    descending confidence, ties by label then x1."""
    try:
        boxes = detector.detect(scene, prompts, cfg)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"detector failed on image {scene.id!r}: {exc}") from exc
    kept = []
    for b in boxes:
        _check_box_in_bounds(b, scene.dims, scene.id)
        if b.confidence >= cfg.box_confidence_threshold:
            kept.append(b)
    kept.sort(key=lambda b: (-b.confidence, b.label, b.box[0]))
    return kept


def _check_mask(
    mask: InstanceMask, scene: Scene, band: int
) -> None:
    h, w = scene.dims
    if mask.mask.shape != (h, w):
        raise BackendError(
            f"segmenter returned mask of dims {mask.mask.shape} for image "
            f"{scene.id!r} of dims {(h, w)}"
        )
    if not mask.mask.any():
        raise BackendError(f"segmenter returned an empty mask for image {scene.id!r}")
    x1, y1, x2, y2 = mask.source_box.box
    ys, xs = np.nonzero(mask.mask)
    if (
        xs.min() < x1 - band
        or ys.min() < y1 - band
        or xs.max() >= x2 + band
        or ys.max() >= y2 + band
    ):
        raise BackendError(
            f"segmenter mask for image {scene.id!r} strays more than {band} px "
            f"outside its prompt box {mask.source_box.box}"
        )


def segment_from_boxes(
    scene: Scene,
    boxes: Sequence[DetectedBox],
    cfg: ZeroShotConfig,
    segmenter: SegmenterBackend,
) -> list[InstanceMask]:
    """Prompt the segmenter with the boxes; one mask per box, order preserved,
    labels copied from the source boxes."""
    if not boxes:
        return []
    try:
        masks = segmenter.segment(scene, boxes)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"segmenter failed on image {scene.id!r}: {exc}") from exc
    if len(masks) != len(boxes):
        raise BackendError(
            f"segmenter returned {len(masks)} masks for {len(boxes)} boxes "
            f"on image {scene.id!r}"
        )
    out = []
    for box, mask in zip(boxes, masks):
        inst = InstanceMask(label=box.label, mask=mask.mask, source_box=box)
        _check_mask(inst, scene, cfg.mask_bleed_band)
        out.append(inst)
    return out


def run_pipeline(
    scene: Scene,
    prompts: TextPromptSet,
    cfg: ZeroShotConfig,
    detector: DetectorBackend,
    segmenter: SegmenterBackend,
) -> list[tuple[DetectedBox, InstanceMask]]:
    """detect_features composed with segment_from_boxes; aligned pairs."""
    boxes = detect_features(scene, prompts, cfg, detector)
    masks = segment_from_boxes(scene, boxes, cfg, segmenter)
    return list(zip(boxes, masks))
