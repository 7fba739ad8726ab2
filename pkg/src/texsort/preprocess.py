"""Spatial normalization per backbone and training-time augmentation.

Preprocessing is: center crop (per-axis ``min(original, target)`` by default),
bicubic resize to the exact target resolution, then linear scaling of 8-bit
values to [-1, 1]. Augmentation applies, in fixed order, random rotation,
width/height shift, zoom, and horizontal flip, drawn from a caller-supplied
random generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class PreprocessSpec:
    target_h: int
    target_w: int
    interpolation: str = "bicubic"
    # "literal": per-axis min(original, target) center crop.
    # "square": largest centered square crop, then resize.
    crop_mode: str = "literal"

    def __post_init__(self) -> None:
        if self.target_h <= 0 or self.target_w <= 0:
            raise ValueError(f"target dims must be positive, got {self.target_h}x{self.target_w}")
        if self.interpolation != "bicubic":
            raise ValueError(f"unsupported interpolation {self.interpolation!r}")
        if self.crop_mode not in ("literal", "square"):
            raise ValueError(f"unknown crop_mode {self.crop_mode!r}")


@dataclass(frozen=True)
class AugmentConfig:
    max_rotation_deg: float = 90.0
    max_width_shift_frac: float = 0.30
    max_height_shift_frac: float = 0.30
    max_zoom_frac: float = 0.30
    hflip_prob: float = 0.5
    fill_mode: str = "nearest"

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_rotation_deg <= 180.0:
            raise ValueError(f"rotation must be in [0, 180], got {self.max_rotation_deg}")
        for name in ("max_width_shift_frac", "max_height_shift_frac", "max_zoom_frac", "hflip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.fill_mode not in ("nearest",):
            raise ValueError(f"unknown fill_mode {self.fill_mode!r}")


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw of the augmentation transform."""

    rotation_deg: float
    width_shift_frac: float
    height_shift_frac: float
    zoom: float
    hflip: bool


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Keys cubic kernel (a = -0.5) evaluated at |t| <= 2."""
    at = np.abs(t)
    w = np.zeros_like(at)
    near = at <= 1.0
    far = (at > 1.0) & (at < 2.0)
    w[near] = 1.5 * at[near] ** 3 - 2.5 * at[near] ** 2 + 1.0
    w[far] = -0.5 * at[far] ** 3 + 2.5 * at[far] ** 2 - 4.0 * at[far] + 2.0
    return w


def _resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) bicubic interpolation weights with edge clamping."""
    scale = in_size / out_size
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((out_size, in_size))
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, in_size - 1)
        w = _cubic_weights(src - (base + k))
        np.add.at(mat, (np.arange(out_size), idx), w)
    return mat


def resize_bicubic(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize; returns float64, same channel layout as input."""
    img = np.asarray(image, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if in_h == out_h and in_w == out_w:
        return img.copy()
    rows = _resize_matrix(in_h, out_h)
    cols = _resize_matrix(in_w, out_w)
    out = np.tensordot(rows, img, axes=(1, 0))
    out = np.tensordot(cols, out, axes=(1, 1))
    # tensordot puts the col axis first; restore (h, w[, c]) order
    return np.swapaxes(out, 0, 1)


def center_crop(image: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    h, w = image.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("image must have at least one pixel per dimension")
    if spec.crop_mode == "literal":
        ch, cw = min(h, spec.target_h), min(w, spec.target_w)
    else:
        side = min(h, w)
        ch = cw = side
    oy = (h - ch) // 2
    ox = (w - cw) // 2
    return image[oy : oy + ch, ox : ox + cw]


def center_crop_resize(image: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Center crop then bicubic-resize to exactly (target_h, target_w).

    The crop is identical to ``center_crop``; when its dims already equal the
    target the input pixels pass through bit-exact. uint8 inputs come back as
    uint8 (rounded, clipped); float inputs come back as float64.
    """
    crop = center_crop(image, spec)
    if crop.shape[:2] == (spec.target_h, spec.target_w):
        return crop.copy()
    out = resize_bicubic(crop, spec.target_h, spec.target_w)
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def to_model_input(image: np.ndarray) -> np.ndarray:
    """Linearly scale 8-bit values to [-1, 1] as float32 (v / 127.5 - 1)."""
    if image.dtype != np.uint8:
        raise ValueError(f"expected 8-bit input, got dtype {image.dtype}")
    return image.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def draw_augment_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """Draw one transform: rotation, shifts, and zoom are uniform; flip is Bernoulli."""
    rotation = float(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    wshift = float(rng.uniform(-cfg.max_width_shift_frac, cfg.max_width_shift_frac))
    hshift = float(rng.uniform(-cfg.max_height_shift_frac, cfg.max_height_shift_frac))
    zoom = float(rng.uniform(1.0 - cfg.max_zoom_frac, 1.0 + cfg.max_zoom_frac))
    hflip = bool(rng.uniform() < cfg.hflip_prob)
    return AugmentParams(
        rotation_deg=rotation,
        width_shift_frac=wshift,
        height_shift_frac=hshift,
        zoom=zoom,
        hflip=hflip,
    )


def apply_augment(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply rotate -> shift -> zoom -> flip about the image center.

    Output dims equal input dims; out-of-bounds samples take the nearest edge
    value. Pure geometric identities (no rotation/shift, zoom 1) short-circuit
    so identity and flip-only transforms are bit-exact.
    """
    h, w = image.shape[:2]
    geometric_identity = (
        params.rotation_deg == 0.0
        and params.width_shift_frac == 0.0
        and params.height_shift_frac == 0.0
        and params.zoom == 1.0
    )
    if geometric_identity:
        return image[:, ::-1].copy() if params.hflip else image.copy()

    # Forward transform p' = F(Z(S(R(p)))) about the center; resampling needs
    # the inverse map output -> input, i.e. R^-1 . S^-1 . Z^-1 . F^-1. Each
    # step is affine about the center: v -> c + A(v - c) + t.
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    theta = np.deg2rad(params.rotation_deg)
    rot_inv = np.array(
        [[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]]
    )
    shift_px = np.array(
        [params.height_shift_frac * h, params.width_shift_frac * w]
    )
    steps: list[tuple[np.ndarray, np.ndarray]] = []
    if params.hflip:
        steps.append((np.array([[1.0, 0.0], [0.0, -1.0]]), np.zeros(2)))
    steps.append((np.eye(2) / params.zoom, np.zeros(2)))
    steps.append((np.eye(2), -shift_px))
    steps.append((rot_inv, np.zeros(2)))

    mat = np.eye(2)
    off = np.zeros(2)
    for a, t in steps:
        off = a @ (off - center) + center + t
        mat = a @ mat

    src = np.asarray(image, dtype=np.float32)
    if src.ndim == 2:
        warped = ndimage.affine_transform(
            src, mat, offset=off, order=1, mode="nearest"
        )
    else:
        mat3 = np.eye(3)
        mat3[:2, :2] = mat
        off3 = np.array([off[0], off[1], 0.0])
        warped = ndimage.affine_transform(
            src, mat3, offset=off3, order=1, mode="nearest"
        )
    if image.dtype == np.uint8:
        return np.clip(np.rint(warped), 0, 255).astype(np.uint8)
    return warped.astype(image.dtype)


def augment(
    image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Draw a transform from ``rng`` and apply it. Training batches only."""
    return apply_augment(image, draw_augment_params(cfg, rng))
