import numpy as np
import pytest

from texsort.dataset import CLASS_ORDER, Manifest, Sample
from texsort.synthgen import SynthSpec, gen_fastener_corpus, gen_texture_dataset


def make_balanced_manifest(n_per_class=20, n_test=0, test_profile=None):
    """In-memory manifest with synthetic ids; no image files (unit tests only)."""
    samples = []
    for cls in CLASS_ORDER:
        for i in range(n_per_class):
            samples.append(
                Sample(id=f"{cls}_{i}", image_path=f"{cls}_{i}.png", material=cls)
            )
    if test_profile:
        for cls, count in test_profile.items():
            for i in range(count):
                samples.append(
                    Sample(
                        id=f"{cls}_t{i}",
                        image_path=f"{cls}_t{i}.png",
                        material=cls,
                        role="test",
                    )
                )
    elif n_test:
        for cls in CLASS_ORDER:
            for i in range(n_test):
                samples.append(
                    Sample(
                        id=f"{cls}_t{i}",
                        image_path=f"{cls}_t{i}.png",
                        material=cls,
                        role="test",
                    )
                )
    return Manifest(samples=samples)


@pytest.fixture(scope="session")
def texture_dataset(tmp_path_factory):
    """Small on-disk texture dataset shared by the slower tests."""
    out = tmp_path_factory.mktemp("textures")
    spec = SynthSpec(n_per_class=20, seed=1)
    manifest = gen_texture_dataset(spec, out)
    return manifest


@pytest.fixture(scope="session")
def scene_corpus(tmp_path_factory):
    """20 fastener scenes with ground truth, shared across tests."""
    out = tmp_path_factory.mktemp("scenes")
    spec = SynthSpec(seed=1)
    manifest = gen_fastener_corpus(spec, out, 20)
    return manifest


def pixel_mask_iou_loop(a, b) -> float:
    """Independent IoU oracle: pure-python per-pixel counting."""
    rows_a = a.tolist()
    rows_b = b.tolist()
    inter = union = 0
    for ra, rb in zip(rows_a, rows_b):
        for va, vb in zip(ra, rb):
            if va and vb:
                inter += 1
            if va or vb:
                union += 1
    return inter / union if union else 0.0


def greedy_match_loop(preds, gts, iou_threshold=0.5):
    """Independent matching oracle: recompute every same-label pair IoU with
    the pixel loop, sort, and greedily accept."""
    candidates = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(gts):
            if p.label != g.label:
                continue
            v = pixel_mask_iou_loop(p.mask, g.mask)
            if v >= iou_threshold:
                candidates.append((v, pi, gi))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    taken_p, taken_g, pairs = set(), set(), []
    for v, pi, gi in candidates:
        if pi in taken_p or gi in taken_g:
            continue
        taken_p.add(pi)
        taken_g.add(gi)
        pairs.append((pi, gi, v))
    return pairs


def random_mask(rng: np.random.Generator, h: int, w: int, p: float = 0.3):
    return rng.random((h, w)) < p
