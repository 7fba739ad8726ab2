"""Two-phase transfer-learning loop: frozen-base head training followed by
partial fine-tuning, with plateau learning-rate reduction, early stopping, and
global-best checkpointing.

The callback decisions are pure functions of the validation-loss trace
(`early_stop_decision`, `plateau_lr_schedule`); the loop consults them each
epoch, so loop behavior can be verified against the recorded history alone.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .backbones import (
    BackboneSpec,
    TextileClassifier,
    build_model,
    set_phase1_trainable,
    set_phase2_trainable,
)
from .dataset import FoldPlan, Manifest, split_train_val
from .preprocess import AugmentConfig, augment, center_crop_resize, to_model_input


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-5
    loss: str = "categorical_crossentropy"
    batch_size: int = 4
    max_epochs_phase1: int = 15
    max_epochs_phase2: int = 50
    early_stop_patience: int = 15
    reduce_lr_patience: int = 10
    reduce_lr_factor: float = 0.2
    min_lr: float = 1e-6

    def __post_init__(self) -> None:
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss != "categorical_crossentropy":
            raise ValueError(f"unsupported loss {self.loss!r}")
        for name in (
            "lr_phase1",
            "lr_phase2",
            "batch_size",
            "max_epochs_phase1",
            "max_epochs_phase2",
            "early_stop_patience",
            "reduce_lr_patience",
            "reduce_lr_factor",
            "min_lr",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class EpochRecord:
    phase: int
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def phase(self, phase: int) -> list[EpochRecord]:
        return [r for r in self.records if r.phase == phase]

    def best_val_accuracy(self) -> float:
        return max(r.val_acc for r in self.records)


@dataclass
class Checkpoint:
    """Weight snapshot with the highest validation accuracy seen so far."""

    state_dict: dict
    val_accuracy: float
    phase: int
    epoch: int
    fold: int = -1
    unfrozen_layer_names: tuple[str, ...] = ()


def early_stop_decision(
    val_losses: Sequence[float], patience: int
) -> tuple[bool, int]:
    """Stop when the validation loss has not strictly improved for ``patience``
    consecutive epochs. Returns (stop now, best epoch index); the best epoch is
    the argmin of the losses, earliest on ties.
    """
    if len(val_losses) == 0:
        raise ValueError("empty loss history")
    best = val_losses[0]
    best_epoch = 0
    wait = 0
    for e in range(1, len(val_losses)):
        if val_losses[e] < best:
            best = val_losses[e]
            best_epoch = e
            wait = 0
        else:
            wait += 1
    return wait >= patience, best_epoch


def plateau_lr_schedule(
    val_losses: Sequence[float],
    initial_lr: float,
    factor: float,
    patience: int,
    min_lr: float,
) -> list[float]:
    """Learning rate for each epoch given the losses observed so far.

    Entry ``i`` is the rate in effect during epoch ``i``; the returned list has
    one extra trailing entry, the rate for the upcoming epoch. The rate is
    multiplied by ``factor`` (floored at ``min_lr``) after ``patience``
    consecutive epochs without strict improvement, and the plateau counter
    resets after each reduction.
    """
    lr = initial_lr
    best = float("inf")
    wait = 0
    trace = []
    for loss in val_losses:
        trace.append(lr)
        if loss < best:
            best = loss
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                lr = max(lr * factor, min_lr)
                wait = 0
    trace.append(lr)
    return trace


class FoldData:
    """Preprocessed image/label store for one backbone.

    Images are center-cropped and resized once at construction; augmentation
    (training batches only) and the [-1, 1] scaling happen per batch.
    """

    def __init__(
        self,
        manifest: Manifest,
        backbone: BackboneSpec,
        crop_mode: str = "literal",
        image_loader=None,
    ):
        from PIL import Image

        spec = backbone.preprocess_spec(crop_mode)
        self.class_index = {c: i for i, c in enumerate(manifest.classes)}
        self.images: dict[str, np.ndarray] = {}
        self.labels: dict[str, int] = {}
        for sample in manifest.samples:
            if sample.material is None:
                continue
            if image_loader is not None:
                raw = image_loader(sample)
            else:
                with Image.open(sample.image_path) as im:
                    raw = np.asarray(im.convert("RGB"))
            self.images[sample.id] = center_crop_resize(raw, spec)
            self.labels[sample.id] = self.class_index[sample.material]

    def train_batches(
        self,
        ids: Sequence[str],
        batch_size: int,
        rng: np.random.Generator,
        augment_cfg: AugmentConfig | None,
    ):
        order = list(ids)
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            imgs = []
            for sid in chunk:
                img = self.images[sid]
                if augment_cfg is not None:
                    img = augment(img, augment_cfg, rng)
                imgs.append(to_model_input(img))
            x = np.stack(imgs).transpose(0, 3, 1, 2)
            y = np.array([self.labels[sid] for sid in chunk], dtype=np.int64)
            yield torch.from_numpy(np.ascontiguousarray(x)), torch.from_numpy(y)

    def eval_arrays(self, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        # fixed order, never augmented
        x = np.stack([to_model_input(self.images[sid]) for sid in ids])
        y = np.array([self.labels[sid] for sid in ids], dtype=np.int64)
        return x, y


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def _evaluate(
    model: TextileClassifier, x: np.ndarray, y: np.ndarray, batch_size: int
) -> tuple[float, float]:
    model.eval()
    loss_fn = nn.CrossEntropyLoss(reduction="sum")
    total_loss = 0.0
    correct = 0
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            bx = torch.from_numpy(
                np.ascontiguousarray(
                    x[start : start + batch_size].transpose(0, 3, 1, 2)
                )
            )
            by = torch.from_numpy(y[start : start + batch_size])
            logits = model(bx)
            total_loss += float(loss_fn(logits, by))
            correct += int((logits.argmax(dim=1) == by).sum())
    return total_loss / len(x), correct / len(x)


def _run_phase(
    model: TextileClassifier,
    phase: int,
    lr_initial: float,
    max_epochs: int,
    cfg: TrainConfig,
    data: FoldData,
    train_ids: Sequence[str],
    val_x: np.ndarray,
    val_y: np.ndarray,
    augment_cfg: AugmentConfig | None,
    seed: int,
    fold: int,
    history: TrainHistory,
    checkpoint: Checkpoint,
) -> Checkpoint:
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=lr_initial)
    loss_fn = nn.CrossEntropyLoss()
    val_losses: list[float] = []
    best_loss = float("inf")
    best_loss_state: dict | None = None
    for epoch in range(max_epochs):
        lr = plateau_lr_schedule(
            val_losses, lr_initial, cfg.reduce_lr_factor,
            cfg.reduce_lr_patience, cfg.min_lr,
        )[-1]
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        rng = np.random.default_rng(derive_seed(seed, fold, phase, epoch))
        train_loss_sum = 0.0
        train_correct = 0
        n_train = 0
        for bx, by in data.train_batches(
            train_ids, cfg.batch_size, rng, augment_cfg
        ):
            optimizer.zero_grad()
            logits = model(bx)
            loss = loss_fn(logits, by)
            loss.backward()
            optimizer.step()
            train_loss_sum += float(loss.detach()) * len(by)
            train_correct += int((logits.argmax(dim=1) == by).sum())
            n_train += len(by)
        val_loss, val_acc = _evaluate(model, val_x, val_y, cfg.batch_size)
        history.records.append(
            EpochRecord(
                phase=phase,
                epoch=epoch,
                train_loss=train_loss_sum / n_train,
                train_acc=train_correct / n_train,
                val_loss=val_loss,
                val_acc=val_acc,
                lr=lr,
            )
        )
        val_losses.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best_loss_state = copy.deepcopy(model.state_dict())
        if val_acc > checkpoint.val_accuracy:
            checkpoint = Checkpoint(
                state_dict=copy.deepcopy(model.state_dict()),
                val_accuracy=val_acc,
                phase=phase,
                epoch=epoch,
                fold=fold,
                unfrozen_layer_names=checkpoint.unfrozen_layer_names,
            )
        stop, _ = early_stop_decision(val_losses, cfg.early_stop_patience)
        if stop:
            break
    # restore the weights from the epoch with the lowest validation loss
    if best_loss_state is not None:
        model.load_state_dict(best_loss_state)
    return checkpoint


def train_two_phase(
    model: TextileClassifier,
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    cfg: TrainConfig,
    backbone: BackboneSpec,
    data: FoldData,
    augment_cfg: AugmentConfig | None = None,
    seed: int = 0,
    fold: int = 0,
    phase_end_hook=None,
) -> tuple[Checkpoint, TrainHistory]:
    """Run the two training phases and return the best checkpoint and history.

    Phase 1 trains only the head on the frozen base at ``lr_phase1``; phase 2
    unfreezes the configured trailing base layers and continues at
    ``lr_phase2``. Early stopping and plateau reduction reset at the phase
    boundary; the returned checkpoint has the maximum validation accuracy seen
    across both phases (earliest epoch on ties).
    """
    if len(train_ids) == 0 or len(val_ids) == 0:
        raise ValueError("train and val sets must be non-empty")
    if set(train_ids) & set(val_ids):
        raise ValueError("train and val sets overlap")
    sample_img = data.images[train_ids[0]]
    if sample_img.shape[:2] != (backbone.input_size, backbone.input_size):
        raise ValueError(
            f"data was preprocessed to {sample_img.shape[:2]}, backbone "
            f"{backbone.name} expects {(backbone.input_size,) * 2}"
        )
    val_x, val_y = data.eval_arrays(val_ids)
    checkpoint = Checkpoint(
        state_dict={}, val_accuracy=-1.0, phase=0, epoch=-1, fold=fold
    )
    history = TrainHistory()

    set_phase1_trainable(model)
    checkpoint = _run_phase(
        model, 1, cfg.lr_phase1, cfg.max_epochs_phase1, cfg, data, train_ids,
        val_x, val_y, augment_cfg, seed, fold, history, checkpoint,
    )
    if phase_end_hook is not None:
        phase_end_hook(1, model)
    unfrozen = set_phase2_trainable(model, backbone.unfreeze_top_layers)
    checkpoint.unfrozen_layer_names = tuple(unfrozen)
    checkpoint = _run_phase(
        model, 2, cfg.lr_phase2, cfg.max_epochs_phase2, cfg, data, train_ids,
        val_x, val_y, augment_cfg, seed, fold, history, checkpoint,
    )
    checkpoint.unfrozen_layer_names = tuple(unfrozen)
    if phase_end_hook is not None:
        phase_end_hook(2, model)
    return checkpoint, history


@dataclass
class CrossValResult:
    folds: list[tuple[Checkpoint, TrainHistory]]
    best_fold: int


def cross_validate(
    manifest: Manifest,
    plan: FoldPlan,
    backbone: BackboneSpec,
    cfg: TrainConfig,
    augment_cfg: AugmentConfig | None = None,
    seed: int = 0,
    pretrained: bool = True,
    data: FoldData | None = None,
    crop_mode: str = "literal",
) -> CrossValResult:
    """Train once per fold; the best fold is the one whose checkpoint has the
    highest validation accuracy (lowest fold index on ties)."""
    if data is None:
        data = FoldData(manifest, backbone, crop_mode)
    results: list[tuple[Checkpoint, TrainHistory]] = []
    for fold in range(plan.k):
        torch.manual_seed(derive_seed(seed, fold))
        model, _ = build_model(backbone, len(manifest.classes), pretrained)
        train_ids, val_ids = split_train_val(plan, fold)
        ckpt, hist = train_two_phase(
            model, train_ids, val_ids, cfg, backbone, data,
            augment_cfg=augment_cfg, seed=seed, fold=fold,
        )
        results.append((ckpt, hist))
    best_fold = 0
    for fold in range(1, plan.k):
        if results[fold][0].val_accuracy > results[best_fold][0].val_accuracy:
            best_fold = fold
    return CrossValResult(folds=results, best_fold=best_fold)


def set_deterministic(seed: int) -> None:
    """Pin every framework RNG and force deterministic kernels."""
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True)
