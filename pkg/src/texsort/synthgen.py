"""Deterministic synthetic data: four separable texture classes for the
classifier protocol, and fastener scenes (disc "buttons", serrated "zipper"
strips) with exact ground-truth masks for the segmentation pipeline.

Everything is a pure function of (spec, seed); regenerating writes
byte-identical images. The texture families differ in stripe orientation,
stripe frequency, and tint, so small models separate them in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import (
    CLASS_ORDER,
    TEST_PROFILE,
    GroundTruthInstance,
    Manifest,
    Sample,
    save_manifest,
)
from .rle import tight_box

_CLASS_TINTS = {
    "Cotton": (205.0, 175.0, 135.0),
    "Polyester": (125.0, 145.0, 190.0),
    "CottonPolyester": (135.0, 190.0, 140.0),
    "ViscosePolyester": (200.0, 135.0, 190.0),
}


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 20
    image_dims: tuple[int, int] = (96, 96)
    seed: int = 0
    scene_dims: tuple[int, int] = (160, 160)
    fasteners_per_scene: tuple[int, int] = (1, 3)
    test_profile: bool = True  # also emit the 6/6/6/14 held-out split

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise ValueError(f"n_per_class must be >= 1, got {self.n_per_class}")
        for dims in (self.image_dims, self.scene_dims):
            if min(dims) < 64:
                raise ValueError(f"dims must be at least 64x64, got {dims}")
        lo, hi = self.fasteners_per_scene
        if not 0 <= lo <= hi:
            raise ValueError(
                f"bad fastener count range {self.fasteners_per_scene}"
            )


def _seeded(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(parts))


def render_texture(
    class_name: str, dims: tuple[int, int], rng: np.random.Generator
) -> np.ndarray:
    """One textile-like texture image for the given class, uint8 RGB."""
    h, w = dims
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    if class_name == "Cotton":
        # broad horizontal bands
        period = rng.uniform(22.0, 28.0)
        t = np.sin(2 * np.pi * y / period + phase)
    elif class_name == "Polyester":
        # fine vertical ribs
        period = rng.uniform(10.0, 14.0)
        t = np.sin(2 * np.pi * x / period + phase)
    elif class_name == "CottonPolyester":
        # diagonal twill
        period = rng.uniform(14.0, 18.0)
        t = np.sin(2 * np.pi * (x + y) / (np.sqrt(2.0) * period) + phase)
    elif class_name == "ViscosePolyester":
        # dotted lattice (no dominant gradient orientation)
        period = rng.uniform(16.0, 20.0)
        t = np.cos(2 * np.pi * x / period + phase) * np.cos(
            2 * np.pi * y / period + phase
        )
    else:
        raise ValueError(f"unknown texture class {class_name!r}")
    base = np.array(_CLASS_TINTS[class_name]) + rng.uniform(-10.0, 10.0, size=3)
    amp = rng.uniform(36.0, 44.0)
    img = base[None, None, :] + amp * t[..., None] + rng.normal(0.0, 4.0, (h, w, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _weave_background(dims: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = dims
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    p = rng.uniform(8.0, 11.0)
    weave = 12.0 * np.sin(2 * np.pi * x / p) + 12.0 * np.sin(2 * np.pi * y / p)
    base = np.array([168.0, 162.0, 150.0]) + rng.uniform(-10.0, 10.0, size=3)
    img = base[None, None, :] + weave[..., None] + rng.normal(0.0, 4.0, (h, w, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _button_mask(
    dims: tuple[int, int], rng: np.random.Generator, margin: int, shrink: float
) -> np.ndarray:
    h, w = dims
    side = min(h, w)
    r = max(8, int(round(side * rng.uniform(0.14, 0.17) * shrink)))
    cy = int(rng.integers(margin + r, h - margin - r))
    cx = int(rng.integers(margin + r, w - margin - r))
    y, x = np.mgrid[0:h, 0:w]
    d2 = (y - cy) ** 2 + (x - cx) ** 2
    disc = d2 <= r * r
    hole_r = max(2, r // 7)
    off = max(3, r // 3)
    holes = np.zeros_like(disc)
    for dy, dx in ((-off, -off), (-off, off), (off, -off), (off, off)):
        hd2 = (y - (cy + dy)) ** 2 + (x - (cx + dx)) ** 2
        holes |= hd2 <= hole_r * hole_r
    return disc & ~holes


def _zipper_mask(
    dims: tuple[int, int], rng: np.random.Generator, margin: int, shrink: float
) -> np.ndarray:
    h, w = dims
    side = min(h, w)
    width = max(14, int(round(side * rng.uniform(0.19, 0.23) * shrink)))
    length = max(30, int(round(side * rng.uniform(0.45, 0.62) * shrink)))
    horizontal = bool(rng.integers(0, 2))
    tooth_w, depth = 6, 3
    mask = np.zeros((h, w), dtype=bool)
    if horizontal:
        y1 = int(rng.integers(margin, h - margin - width))
        x1 = int(rng.integers(margin, w - margin - length))
        cols = np.arange(x1, x1 + length)
        tooth_phase = ((cols - x1) // tooth_w) % 2
        mask[y1 + depth : y1 + width - depth, x1 : x1 + length] = True
        mask[y1 : y1 + depth, cols[tooth_phase == 0]] = True
        mask[y1 + width - depth : y1 + width, cols[tooth_phase == 1]] = True
    else:
        x1 = int(rng.integers(margin, w - margin - width))
        y1 = int(rng.integers(margin, h - margin - length))
        rows = np.arange(y1, y1 + length)
        tooth_phase = ((rows - y1) // tooth_w) % 2
        mask[y1 : y1 + length, x1 + depth : x1 + width - depth] = True
        mask[rows[tooth_phase == 0], x1 : x1 + depth] = True
        mask[rows[tooth_phase == 1], x1 + width - depth : x1 + width] = True
    return mask


def _boxes_separated(a, b, gap: int = 4) -> bool:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    return (
        ax2 + gap <= bx1
        or bx2 + gap <= ax1
        or ay2 + gap <= by1
        or by2 + gap <= ay1
    )


def gen_fastener_scene(
    seed: int,
    image_dims: tuple[int, int] = (160, 160),
    n_buttons: int | None = None,
    n_zippers: int | None = None,
    count_range: tuple[int, int] = (1, 3),
) -> tuple[np.ndarray, list[GroundTruthInstance]]:
    """Render one scene of non-overlapping fasteners on a woven background.

    Returns the uint8 RGB image and the ground-truth instances with exact
    masks and tight boxes. Instances keep a 12 px margin from the frame so
    perturbation stubs that dilate masks stay in bounds. Explicit counts
    override the random count range.
    """
    if min(image_dims) < 64:
        raise ValueError(f"image dims too small for a fastener: {image_dims}")
    rng = _seeded(seed, 0xFA57)
    margin = 12
    image = _weave_background(image_dims, rng)
    if n_buttons is None and n_zippers is None:
        total = int(rng.integers(count_range[0], count_range[1] + 1))
        labels = [
            "button" if rng.integers(0, 2) == 0 else "zipper" for _ in range(total)
        ]
    else:
        labels = ["button"] * (n_buttons or 0) + ["zipper"] * (n_zippers or 0)

    masks = None
    for layout_try in range(25):
        masks = _try_layout(
            image_dims, labels, margin, _seeded(seed, 0xFA57, layout_try)
        )
        if masks is not None:
            break
    if masks is None:
        raise ValueError(f"could not place {len(labels)} fasteners in {image_dims}")

    paint_rng = _seeded(seed, 0xFA57, 99)
    instances: list[GroundTruthInstance] = []
    for label, mask in zip(labels, masks):
        if label == "button":
            shade = paint_rng.uniform(45.0, 85.0)
            color = np.array([shade, shade * 0.92, shade * 0.85])
        else:
            shade = paint_rng.uniform(95.0, 135.0)
            color = np.array([shade, shade, shade * 1.08])
        jitter = paint_rng.normal(0.0, 3.0, (int(mask.sum()), 3))
        image[mask] = np.clip(np.rint(color[None, :] + jitter), 0, 255).astype(
            np.uint8
        )
        instances.append(
            GroundTruthInstance(label=label, mask=mask, box=tight_box(mask))
        )
    return image, instances


def _try_layout(
    image_dims: tuple[int, int],
    labels: list[str],
    margin: int,
    rng: np.random.Generator,
) -> list[np.ndarray] | None:
    """One attempt at placing all fasteners; None when packing fails."""
    masks: list[np.ndarray] = []
    placed: list[tuple[int, int, int, int]] = []
    for label in labels:
        for attempt in range(400):
            # shrink gradually when placement keeps colliding; the floor keeps
            # instances large enough that moderate mask dilation stays matchable
            shrink = max(0.55, 0.9 ** (attempt // 40))
            if label == "button":
                mask = _button_mask(image_dims, rng, margin, shrink)
            else:
                mask = _zipper_mask(image_dims, rng, margin, shrink)
            box = tight_box(mask)
            if all(_boxes_separated(box, other) for other in placed):
                break
        else:
            return None
        placed.append(box)
        masks.append(mask)
    return masks


def _write_png(image: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path)


def gen_texture_dataset(spec: SynthSpec, out_dir: str | Path) -> Manifest:
    """Write a balanced trainval texture dataset (plus the reference test
    split when enabled) and its manifest; returns the validated Manifest."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    samples: list[Sample] = []
    for class_index, class_name in enumerate(CLASS_ORDER):
        for i in range(spec.n_per_class):
            rng = _seeded(spec.seed, 0, class_index, i)
            img = render_texture(class_name, spec.image_dims, rng)
            sid = f"{class_name.lower()}_{i:03d}"
            path = images_dir / f"{sid}.png"
            _write_png(img, path)
            samples.append(
                Sample(id=sid, image_path=path, material=class_name, role="trainval")
            )
    if spec.test_profile:
        for class_index, class_name in enumerate(CLASS_ORDER):
            for i in range(TEST_PROFILE[class_name]):
                rng = _seeded(spec.seed, 1, class_index, i)
                img = render_texture(class_name, spec.image_dims, rng)
                sid = f"{class_name.lower()}_test_{i:03d}"
                path = images_dir / f"{sid}.png"
                _write_png(img, path)
                samples.append(
                    Sample(id=sid, image_path=path, material=class_name, role="test")
                )
    manifest = Manifest(samples=samples)
    manifest.validate()
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def gen_fastener_corpus(
    spec: SynthSpec, out_dir: str | Path, n_scenes: int
) -> Manifest:
    """Write ``n_scenes`` fastener scenes with ground truth and their manifest."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    samples: list[Sample] = []
    for i in range(n_scenes):
        scene_seed = int(np.random.SeedSequence((spec.seed, 2, i)).generate_state(1)[0])
        image, instances = gen_fastener_scene(
            scene_seed, spec.scene_dims, count_range=spec.fasteners_per_scene
        )
        sid = f"scene_{i:03d}"
        path = images_dir / f"{sid}.png"
        _write_png(image, path)
        samples.append(
            Sample(id=sid, image_path=path, gt_instances=instances, role="test")
        )
    manifest = Manifest(samples=samples)
    manifest.validate()
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
