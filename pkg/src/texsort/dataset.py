"""Dataset manifest, held-out test composition, and stratified k-fold plans."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rle import rle_decode, rle_encode, tight_box

# Fixed class order: keeps confusion-matrix axes stable across runs.
CLASS_ORDER = ("Cotton", "Polyester", "CottonPolyester", "ViscosePolyester")

INSTANCE_LABELS = ("button", "zipper")

ROLES = ("trainval", "test")

# Per-class composition of the reference held-out test set.
TEST_PROFILE = {
    "Cotton": 6,
    "Polyester": 6,
    "CottonPolyester": 6,
    "ViscosePolyester": 14,
}


class ManifestError(ValueError):
    """A manifest violated a structural invariant."""


@dataclass(frozen=True)
class GroundTruthInstance:
    """An annotated non-textile feature: label, pixel mask, tight box."""

    label: str
    mask: np.ndarray  # bool (h, w)
    box: tuple[int, int, int, int]  # [x1, y1, x2, y2), pixel coords


@dataclass
class Sample:
    id: str
    image_path: Path
    material: str | None = None
    gt_instances: list[GroundTruthInstance] = field(default_factory=list)
    role: str = "trainval"


@dataclass
class Manifest:
    samples: list[Sample]
    classes: tuple[str, ...] = CLASS_ORDER

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def trainval(self) -> list[Sample]:
        return [s for s in self.samples if s.role == "trainval"]

    def test(self) -> list[Sample]:
        return [s for s in self.samples if s.role == "test"]

    def validate(self) -> None:
        """Check structural invariants; raises ManifestError on the first violation."""
        if tuple(self.classes) != CLASS_ORDER:
            raise ManifestError(
                f"class list must be exactly {list(CLASS_ORDER)}, got {list(self.classes)}"
            )
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise ManifestError(f"duplicate sample id: {s.id!r}")
            seen.add(s.id)
            if s.role not in ROLES:
                raise ManifestError(f"sample {s.id!r}: unknown role {s.role!r}")
            if s.material is not None and s.material not in self.classes:
                raise ManifestError(
                    f"sample {s.id!r}: unknown class name {s.material!r}"
                )
            for inst in s.gt_instances:
                if inst.label not in INSTANCE_LABELS:
                    raise ManifestError(
                        f"sample {s.id!r}: unknown instance label {inst.label!r}"
                    )
                if not inst.mask.any():
                    raise ManifestError(f"sample {s.id!r}: empty instance mask")
                tb = tight_box(inst.mask)
                if tuple(inst.box) != tb:
                    raise ManifestError(
                        f"sample {s.id!r}: box {tuple(inst.box)} is not the tight "
                        f"bounding box {tb} of its mask"
                    )
        # Trainval classification samples must be balanced across the classes
        # that appear (equal counts per present class).
        counts = Counter(
            s.material for s in self.trainval() if s.material is not None
        )
        if counts and len(set(counts.values())) > 1:
            raise ManifestError(
                f"trainval partition is not class-balanced: {dict(counts)}"
            )


def _parse_instance(raw: dict, sample_id: str) -> GroundTruthInstance:
    allowed = {"label", "mask", "box"}
    unknown = set(raw) - allowed
    if unknown:
        raise ManifestError(
            f"sample {sample_id!r}: unknown instance keys {sorted(unknown)}"
        )
    try:
        mask = rle_decode(raw["mask"])
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"sample {sample_id!r}: bad mask RLE: {exc}") from exc
    box = raw.get("box")
    if (
        not isinstance(box, (list, tuple))
        or len(box) != 4
        or not all(isinstance(v, int) for v in box)
    ):
        raise ManifestError(f"sample {sample_id!r}: box must be 4 integers")
    return GroundTruthInstance(
        label=raw.get("label", ""), mask=mask, box=tuple(box)
    )


def load_manifest(path: str | Path) -> Manifest:
    """Load and fully validate a manifest JSON file.

    Image paths in the file are resolved relative to the manifest's directory.
    Beyond the structural invariants this checks that every referenced image
    exists and that instance mask dimensions match the image dimensions.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    unknown = set(raw) - {"classes", "samples"}
    if unknown:
        raise ManifestError(f"unknown top-level manifest keys {sorted(unknown)}")
    classes = tuple(raw.get("classes", ()))
    samples: list[Sample] = []
    for entry in raw.get("samples", []):
        allowed = {"id", "image", "material", "instances", "role"}
        unknown = set(entry) - allowed
        sid = entry.get("id", "<missing id>")
        if unknown:
            raise ManifestError(f"sample {sid!r}: unknown keys {sorted(unknown)}")
        if "id" not in entry or "image" not in entry:
            raise ManifestError(f"sample {sid!r}: 'id' and 'image' are required")
        image_path = (path.parent / entry["image"]).resolve()
        if not image_path.is_file():
            raise ManifestError(f"sample {sid!r}: missing image file {image_path}")
        instances = [
            _parse_instance(inst, sid) for inst in entry.get("instances", [])
        ]
        if instances:
            with Image.open(image_path) as im:
                w, h = im.size
            for inst in instances:
                if inst.mask.shape != (h, w):
                    raise ManifestError(
                        f"sample {sid!r}: mask dims {inst.mask.shape} do not match "
                        f"image dims {(h, w)}"
                    )
        samples.append(
            Sample(
                id=entry["id"],
                image_path=image_path,
                material=entry.get("material"),
                gt_instances=instances,
                role=entry.get("role", "trainval"),
            )
        )
    manifest = Manifest(samples=samples, classes=classes)
    manifest.validate()
    return manifest


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest JSON file with image paths relative to its directory."""
    path = Path(path)
    entries = []
    for s in manifest.samples:
        entry: dict = {
            "id": s.id,
            "image": str(Path(s.image_path).resolve().relative_to(path.parent.resolve())),
            "role": s.role,
        }
        if s.material is not None:
            entry["material"] = s.material
        if s.gt_instances:
            entry["instances"] = [
                {
                    "label": inst.label,
                    "mask": rle_encode(inst.mask),
                    "box": list(inst.box),
                }
                for inst in s.gt_instances
            ]
        entries.append(entry)
    payload = {"classes": list(manifest.classes), "samples": entries}
    path.write_text(json.dumps(payload, indent=2) + "\n")


@dataclass(frozen=True)
class FoldPlan:
    """Partition of the trainval samples into k mutually exclusive folds."""

    k: int
    seed: int
    assignment: dict[str, int]  # sample id -> fold index in [0, k)

    def fold_ids(self, fold_index: int) -> list[str]:
        return sorted(i for i, f in self.assignment.items() if f == fold_index)


def make_folds(manifest: Manifest, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold assignment of the trainval samples.

    Within each material class the sample ids are sorted, shuffled by the
    seeded generator, and dealt round-robin to folds, so per-class fold counts
    differ by at most one (exactly equal when divisible). The starting fold
    rotates with the class index so remainders spread across folds. The result
    is a pure function of (trainval ids, k, seed).
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    strata: dict[str | None, list[str]] = defaultdict(list)
    for s in manifest.trainval():
        strata[s.material].append(s.id)
    if not strata:
        raise ValueError("manifest has no trainval samples")
    smallest = min(len(ids) for ids in strata.values())
    if k > smallest:
        raise ValueError(
            f"k={k} exceeds smallest class count {smallest}"
        )
    order = [c for c in CLASS_ORDER if c in strata]
    if None in strata:
        order.append(None)
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    for class_index, material in enumerate(order):
        ids = sorted(strata[material])
        rng.shuffle(ids)
        start = class_index % k
        for i, sid in enumerate(ids):
            assignment[sid] = (start + i) % k
    return FoldPlan(k=k, seed=seed, assignment=assignment)


def split_train_val(plan: FoldPlan, fold_index: int) -> tuple[list[str], list[str]]:
    """Train/val ids for one fold: val = the fold, train = all other folds."""
    if not 0 <= fold_index < plan.k:
        raise ValueError(f"fold index {fold_index} out of range [0, {plan.k})")
    val = sorted(i for i, f in plan.assignment.items() if f == fold_index)
    train = sorted(i for i, f in plan.assignment.items() if f != fold_index)
    return train, val


def save_fold_plan(plan: FoldPlan, path: str | Path) -> None:
    payload = {"k": plan.k, "seed": plan.seed, "assignment": plan.assignment}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_fold_plan(path: str | Path) -> FoldPlan:
    raw = json.loads(Path(path).read_text())
    return FoldPlan(
        k=int(raw["k"]),
        seed=int(raw["seed"]),
        assignment={str(i): int(f) for i, f in raw["assignment"].items()},
    )


@dataclass(frozen=True)
class CompositionReport:
    """Per-class test counts compared against the reference profile."""

    counts: dict[str, int]
    expected: dict[str, int]
    deltas: dict[str, int]
    total: int
    match: bool


def validate_test_composition(manifest: Manifest) -> CompositionReport:
    """Report per-class test counts and whether they match the reference profile."""
    counts = {c: 0 for c in manifest.classes}
    for s in manifest.test():
        if s.material is not None:
            counts[s.material] += 1
    deltas = {c: counts[c] - TEST_PROFILE.get(c, 0) for c in manifest.classes}
    return CompositionReport(
        counts=counts,
        expected=dict(TEST_PROFILE),
        deltas=deltas,
        total=sum(counts.values()),
        match=all(d == 0 for d in deltas.values()),
    )
