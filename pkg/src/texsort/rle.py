"""Run-length encoding for binary masks.

A mask is serialized as ``"{h}x{w}:c0,c1,c2,..."`` where the counts are run
lengths over row-major pixel order, alternating zero-runs and one-runs and
always starting with the zero-run (which may have length 0).
"""

from __future__ import annotations

import numpy as np


def rle_encode(mask: np.ndarray) -> str:
    """Serialize a 2-D binary mask to its RLE string."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    h, w = mask.shape
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return f"{h}x{w}:"
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    counts = (ends - starts).tolist()
    if flat[0]:
        counts = [0] + counts
    return f"{h}x{w}:" + ",".join(str(c) for c in counts)


def rle_decode(rle: str) -> np.ndarray:
    """Decode an RLE string back to a boolean (h, w) array."""
    header, sep, body = rle.partition(":")
    if not sep:
        raise ValueError(f"malformed RLE (missing ':'): {rle[:40]!r}")
    try:
        h_str, w_str = header.split("x")
        h, w = int(h_str), int(w_str)
        counts = [int(c) for c in body.split(",")] if body else []
    except ValueError as exc:
        raise ValueError(f"malformed RLE: {rle[:40]!r}") from exc
    if h < 0 or w < 0 or any(c < 0 for c in counts):
        raise ValueError(f"negative size or run length in RLE: {rle[:40]!r}")
    if sum(counts) != h * w:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos : pos + c] = True
        pos += c
        val = not val
    return flat.reshape(h, w)


def tight_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight ``[x1, y1, x2, y2)`` bounding box of the set pixels."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("mask has no set pixels")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1
