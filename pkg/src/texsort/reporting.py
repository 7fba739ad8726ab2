"""Report emission: CSVs, JSON summaries, and rendered figures.

Floats are written with ``repr`` so re-parsing recovers them exactly. All
files are written atomically (temp file in the same directory, then rename).
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import ClassReport, ConfusionMatrix
from .training import EpochRecord, TrainHistory

HISTORY_COLUMNS = ("phase", "epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_json(path: str | Path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _fmt(value) -> str:
    # repr of a python float round-trips exactly through float()
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_history_csv(history: TrainHistory, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(HISTORY_COLUMNS)
    for r in history.records:
        writer.writerow(
            [_fmt(getattr(r, col)) for col in HISTORY_COLUMNS]
        )
    atomic_write_text(path, buf.getvalue())


def read_history_csv(path: str | Path) -> TrainHistory:
    history = TrainHistory()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            history.records.append(
                EpochRecord(
                    phase=int(row["phase"]),
                    epoch=int(row["epoch"]),
                    train_loss=float(row["train_loss"]),
                    train_acc=float(row["train_acc"]),
                    val_loss=float(row["val_loss"]),
                    val_acc=float(row["val_acc"]),
                    lr=float(row["lr"]),
                )
            )
    return history


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    """(k+1) square layout: header row/column carry the class names."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["true\\pred", *cm.classes])
    for i, cls in enumerate(cm.classes):
        writer.writerow([cls, *[int(v) for v in cm.counts[i]]])
    atomic_write_text(path, buf.getvalue())


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    classes = tuple(rows[0][1:])
    counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts=counts, classes=classes)


def write_class_report_csv(report: ClassReport, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["class", "precision", "recall", "f1", "support"])
    for i, cls in enumerate(report.classes):
        writer.writerow(
            [
                cls,
                _fmt(report.precision[i]),
                _fmt(report.recall[i]),
                _fmt(report.f1[i]),
                report.support[i],
            ]
        )
    atomic_write_text(path, buf.getvalue())


def read_class_report_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_segmentation_summary_csv(summary: dict, path: str | Path) -> None:
    columns = ["precision", "recall", "f1", "mean_box_iou", "mean_mask_iou"]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(columns)
    writer.writerow([_fmt(float(summary[c])) for c in columns])
    atomic_write_text(path, buf.getvalue())


def render_confusion_figure(cm: ConfusionMatrix, path: str | Path) -> None:
    k = len(cm.classes)
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(k), cm.classes, rotation=30, ha="right")
    ax.set_yticks(range(k), cm.classes)
    ax.set_xlabel("Predicted class")
    ax.set_ylabel("True class")
    threshold = cm.counts.max() / 2 if cm.counts.size else 0
    for i in range(k):
        for j in range(k):
            ax.text(
                j,
                i,
                str(int(cm.counts[i, j])),
                ha="center",
                va="center",
                color="white" if cm.counts[i, j] > threshold else "black",
            )
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save_figure(fig, path)


def _save_figure(fig, path: str | Path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def render_curves(history: TrainHistory, fold: int, out_dir: str | Path) -> list[Path]:
    """One accuracy figure and one loss figure per fold, with the phase
    boundary marked. Epochs are numbered globally across phases."""
    out_dir = Path(out_dir)
    epochs = list(range(len(history.records)))
    phase1_len = len(history.phase(1))
    paths = []
    for metric, train_key, val_key in (
        ("accuracy", "train_acc", "val_acc"),
        ("loss", "train_loss", "val_loss"),
    ):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [getattr(r, train_key) for r in history.records], label=f"train {metric}")
        ax.plot(epochs, [getattr(r, val_key) for r in history.records], label=f"val {metric}")
        if 0 < phase1_len < len(history.records):
            ax.axvline(phase1_len - 0.5, color="gray", linestyle="--", linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric)
        ax.set_title(f"fold {fold} {metric}")
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"fold{fold}_{metric}.png"
        _save_figure(fig, path)
        paths.append(path)
    return paths


def render_overlay(
    image: np.ndarray, pairs, path: str | Path, alpha: float = 0.45
) -> None:
    """Semi-transparent mask fill, box outline, and label text per instance."""
    from PIL import Image, ImageDraw

    palette = [(228, 58, 58), (58, 110, 228), (58, 180, 90), (230, 180, 40)]
    canvas = image.astype(np.float64).copy()
    for idx, (box, mask) in enumerate(pairs):
        color = np.array(palette[idx % len(palette)], dtype=np.float64)
        m = mask.mask
        canvas[m] = (1 - alpha) * canvas[m] + alpha * color[None, :]
    img = Image.fromarray(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)
    for idx, (box, mask) in enumerate(pairs):
        color = palette[idx % len(palette)]
        x1, y1, x2, y2 = box.box
        draw.rectangle([x1, y1, x2 - 1, y2 - 1], outline=color, width=2)
        draw.text(
            (x1 + 2, max(0, y1 - 11)),
            f"{box.label} {box.confidence:.2f}",
            fill=color,
        )
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())
