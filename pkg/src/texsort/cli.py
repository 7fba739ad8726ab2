"""Command-line surface: synth, folds, train, evaluate, segment, report.

Exit codes: 0 success, 1 validation error, 2 runtime failure. Every command
validates its full configuration before producing side effects.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from .backbones import (
    WeightsUnavailableError,
    build_model,
    get_backbone_spec,
    predict,
)
from .backends import build_detector, build_segmenter
from .config import ConfigError, RunConfig, parse_run_config
from .dataset import (
    Manifest,
    ManifestError,
    load_manifest,
    make_folds,
    save_fold_plan,
    split_train_val,
    validate_test_composition,
)
from .metrics import class_report, confusion, match_instances, mean_iou
from .synthgen import SynthSpec, gen_fastener_corpus, gen_texture_dataset
from .training import (
    Checkpoint,
    FoldData,
    derive_seed,
    set_deterministic,
    train_two_phase,
)
from .zeroshot import BackendError, Scene, run_pipeline
from . import reporting
from .rle import rle_encode


def _load_config(args) -> RunConfig:
    cfg = parse_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = Path(args.out).resolve()
    if args.deterministic:
        cfg.deterministic = True
    return cfg


def _require_out(cfg: RunConfig) -> Path:
    if cfg.out_dir is None:
        raise ConfigError(["an output directory is required (--out or config out_dir)"])
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def _require_manifest(cfg: RunConfig, override: Path | None) -> Manifest:
    path = override or cfg.manifest
    if path is None:
        raise ConfigError(["a manifest is required (--manifest or config manifest)"])
    return load_manifest(path)


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = cfg.out_dir or Path("synth_data").resolve()
    spec = SynthSpec(
        n_per_class=args.per_class,
        image_dims=(args.dims, args.dims),
        seed=cfg.seed,
        scene_dims=(args.scene_dims, args.scene_dims),
        test_profile=not args.no_test_split,
    )
    manifest = gen_texture_dataset(spec, out / "textures")
    composition = validate_test_composition(manifest)
    print(
        f"textures: {len(manifest.samples)} images -> {out / 'textures'} "
        f"(test profile match: {composition.match})"
    )
    if args.scenes > 0:
        scenes = gen_fastener_corpus(spec, out / "scenes", args.scenes)
        n_inst = sum(len(s.gt_instances) for s in scenes.samples)
        print(f"scenes: {args.scenes} images, {n_inst} instances -> {out / 'scenes'}")
    return 0


def cmd_folds(args) -> int:
    cfg = _load_config(args)
    manifest = _require_manifest(cfg, args.manifest)
    plan = make_folds(manifest, args.k or cfg.folds.k, cfg.fold_seed)
    out = cfg.out_dir or Path(args.manifest or cfg.manifest).parent
    out.mkdir(parents=True, exist_ok=True)
    save_fold_plan(plan, out / "folds.json")
    sizes = [len(plan.fold_ids(i)) for i in range(plan.k)]
    print(f"fold plan: k={plan.k} seed={plan.seed} sizes={sizes} -> {out / 'folds.json'}")
    return 0


def _save_fold_artifacts(
    out: Path, ckpt: Checkpoint, history, backbone_name: str, classes
) -> None:
    import torch

    buf = io.BytesIO()
    torch.save(ckpt.state_dict, buf)
    reporting.atomic_write_bytes(out / f"fold{ckpt.fold}.pt", buf.getvalue())
    reporting.write_json(
        out / f"fold{ckpt.fold}.json",
        {
            "fold": ckpt.fold,
            "phase": ckpt.phase,
            "epoch": ckpt.epoch,
            "val_accuracy": ckpt.val_accuracy,
            "unfrozen_layer_names": list(ckpt.unfrozen_layer_names),
            "backbone": backbone_name,
            "classes": list(classes),
        },
    )
    reporting.write_history_csv(history, out / f"fold{ckpt.fold}_history.csv")


def cmd_train(args) -> int:
    import torch

    cfg = _load_config(args)
    manifest = _require_manifest(cfg, None)
    out = _require_out(cfg)
    backbone = get_backbone_spec(cfg.backbone)
    plan = make_folds(manifest, cfg.folds.k, cfg.fold_seed)
    if args.fold is not None and not 0 <= args.fold < plan.k:
        raise ConfigError(
            [f"--fold {args.fold} out of range for k={plan.k} folds"]
        )
    if cfg.deterministic:
        set_deterministic(cfg.seed)
    save_fold_plan(plan, out / "folds.json")
    data = FoldData(manifest, backbone, cfg.crop_mode)

    results: list[Checkpoint] = []
    if args.fold is not None:
        folds = [args.fold]
    else:
        folds = list(range(plan.k))
    for fold in folds:
        torch.manual_seed(derive_seed(cfg.seed, fold))
        model, _ = build_model(backbone, len(manifest.classes), cfg.pretrained)
        train_ids, val_ids = split_train_val(plan, fold)
        ckpt, history = train_two_phase(
            model, train_ids, val_ids, cfg.train, backbone, data,
            augment_cfg=cfg.augment, seed=cfg.seed, fold=fold,
        )
        _save_fold_artifacts(out, ckpt, history, backbone.name, manifest.classes)
        results.append(ckpt)
        print(
            f"fold {fold}: best val_accuracy {ckpt.val_accuracy:.4f} "
            f"(phase {ckpt.phase}, epoch {ckpt.epoch})"
        )
    best = max(range(len(results)), key=lambda i: (results[i].val_accuracy, -results[i].fold))
    summary = {
        "best_fold": results[best].fold,
        "backbone": backbone.name,
        "folds": [
            {
                "fold": c.fold,
                "val_accuracy": c.val_accuracy,
                "phase": c.phase,
                "epoch": c.epoch,
            }
            for c in results
        ],
    }
    reporting.write_json(out / "summary.json", summary)
    print(f"best fold: {results[best].fold} -> {out / 'summary.json'}")
    return 0


def _predict_labels(
    cfg: RunConfig, manifest: Manifest, checkpoint_path: Path, test_ids: list[str]
) -> list[str]:
    import torch

    sidecar_path = checkpoint_path.with_suffix(".json")
    if not sidecar_path.is_file():
        raise ConfigError([f"checkpoint sidecar not found: {sidecar_path}"])
    sidecar = json.loads(sidecar_path.read_text())
    if tuple(sidecar.get("classes", ())) != tuple(manifest.classes):
        raise ConfigError(
            [
                f"class-order mismatch: checkpoint has {sidecar.get('classes')}, "
                f"manifest has {list(manifest.classes)}"
            ]
        )
    backbone = get_backbone_spec(sidecar.get("backbone", cfg.backbone))
    model, _ = build_model(backbone, len(manifest.classes), pretrained=False)
    state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    data = FoldData(manifest, backbone, cfg.crop_mode)
    images, _ = data.eval_arrays(test_ids)
    _, label_idx = predict(model, images)
    return [manifest.classes[i] for i in label_idx]


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    manifest = _require_manifest(cfg, args.manifest)
    out = _require_out(cfg)
    test_samples = manifest.test()
    if not test_samples:
        raise ConfigError(["manifest has no test samples to evaluate"])
    if (args.checkpoint is None) == (args.predictions is None):
        raise ConfigError(["exactly one of --checkpoint or --predictions is required"])
    test_ids = [s.id for s in test_samples]
    true_labels = [s.material for s in test_samples]
    if any(label is None for label in true_labels):
        raise ConfigError(["every test sample needs a material label"])

    if args.predictions is not None:
        preds_raw = json.loads(Path(args.predictions).read_text())
        missing = [i for i in test_ids if i not in preds_raw]
        if missing:
            raise ConfigError([f"predictions missing for test ids: {missing[:5]}"])
        pred_labels = [preds_raw[i] for i in test_ids]
    else:
        pred_labels = _predict_labels(cfg, manifest, args.checkpoint, test_ids)

    cm = confusion(true_labels, pred_labels, manifest.classes)
    report = class_report(cm)
    reporting.write_confusion_csv(cm, out / "confusion.csv")
    reporting.write_class_report_csv(report, out / "per_class_metrics.csv")
    reporting.write_json(
        out / "metrics.json",
        {
            "accuracy": report.accuracy,
            "weighted_f1": report.weighted_f1,
            "per_class_f1": dict(zip(report.classes, report.f1)),
            "support": dict(zip(report.classes, report.support)),
        },
    )
    reporting.render_confusion_figure(cm, out / "confusion_matrix.png")
    print(
        f"accuracy {report.accuracy:.4f}, weighted F1 {report.weighted_f1:.4f} "
        f"over {cm.total} test samples -> {out}"
    )
    return 0


def cmd_segment(args) -> int:
    from PIL import Image

    cfg = _load_config(args)
    manifest = _require_manifest(cfg, args.manifest)
    out = _require_out(cfg)
    detector = build_detector(cfg.detector)
    segmenter = build_segmenter(cfg.segmenter)
    (out / "instances").mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(parents=True, exist_ok=True)

    failures = 0
    box_match_counts = np.zeros(3, dtype=np.int64)  # matched, extra preds, missed gts
    mask_match_counts = np.zeros(3, dtype=np.int64)
    mask_iou_values: list[float] = []
    box_iou_values: list[float] = []
    per_image_means: list[float] = []
    any_gt = False
    for sample in manifest.samples:
        try:
            with Image.open(sample.image_path) as im:
                image = np.asarray(im.convert("RGB"))
            scene = Scene(id=sample.id, image=image, gt=sample.gt_instances)
            pairs = run_pipeline(scene, cfg.prompts, cfg.zeroshot, detector, segmenter)
        except (BackendError, OSError) as exc:
            print(f"image {sample.id!r} failed: {exc}", file=sys.stderr)
            failures += 1
            continue
        payload = {
            "image_id": sample.id,
            "instances": [
                {
                    "label": box.label,
                    "confidence": box.confidence,
                    "box": list(box.box),
                    "mask_rle": rle_encode(mask.mask),
                }
                for box, mask in pairs
            ],
        }
        reporting.write_json(out / "instances" / f"{sample.id}.json", payload)
        reporting.render_overlay(image, pairs, out / "overlays" / f"{sample.id}.png")
        if sample.gt_instances:
            any_gt = True
            boxes = [b for b, _ in pairs]
            masks = [m for _, m in pairs]
            bm = match_instances(boxes, sample.gt_instances, mode="box")
            mm = match_instances(masks, sample.gt_instances, mode="mask")
            box_match_counts += (len(bm.pairs), len(bm.unmatched_preds), len(bm.unmatched_gts))
            mask_match_counts += (len(mm.pairs), len(mm.unmatched_preds), len(mm.unmatched_gts))
            box_iou_values += [v for _, _, v in bm.pairs] + [0.0] * len(bm.unmatched_gts)
            mask_iou_values += [v for _, _, v in mm.pairs] + [0.0] * len(mm.unmatched_gts)
            per_image_means.append(mean_iou(mm))

    if any_gt:
        def prf(counts):
            matched, extra, missed = (int(v) for v in counts)
            p = matched / (matched + extra) if matched + extra else 0.0
            r = matched / (matched + missed) if matched + missed else 0.0
            f = 2 * p * r / (p + r) if p + r else 0.0
            return p, r, f

        mp, mr, mf = prf(mask_match_counts)
        bp, br, bf = prf(box_match_counts)
        summary = {
            "precision": mp,
            "recall": mr,
            "f1": mf,
            "mean_box_iou": float(np.mean(box_iou_values)) if box_iou_values else 0.0,
            "mean_mask_iou": float(np.mean(mask_iou_values)) if mask_iou_values else 0.0,
            "box_precision": bp,
            "box_recall": br,
            "box_f1": bf,
            "per_image_mean_mask_iou": (
                float(np.mean(per_image_means)) if per_image_means else 0.0
            ),
            "images_evaluated": len(per_image_means),
        }
        reporting.write_segmentation_summary_csv(summary, out / "segmentation_summary.csv")
        reporting.write_json(out / "segmentation_summary.json", summary)
        print(
            f"segmentation: P {mp:.4f} R {mr:.4f} F1 {mf:.4f} "
            f"mean mask IoU {summary['mean_mask_iou']:.4f} -> {out}"
        )
    else:
        print(f"segmented {len(manifest.samples)} images (no ground truth; summary omitted)")
    if failures:
        print(f"{failures} image(s) failed", file=sys.stderr)
        return 2
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    out = cfg.out_dir or run_dir
    histories = sorted(run_dir.glob("fold*_history.csv"))
    confusion_csv = run_dir / "confusion.csv"
    if not histories and not confusion_csv.is_file():
        raise ConfigError(
            [
                f"no run artifacts in {run_dir}: expected fold<N>_history.csv "
                f"and/or confusion.csv"
            ]
        )
    written = []
    for path in histories:
        fold = int(path.stem.split("_")[0].removeprefix("fold"))
        history = reporting.read_history_csv(path)
        written += reporting.render_curves(history, fold, out)
    if confusion_csv.is_file():
        cm = reporting.read_confusion_csv(confusion_csv)
        figure = out / "confusion_matrix.png"
        reporting.render_confusion_figure(cm, figure)
        written.append(figure)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texsort",
        description="Textile material classification and contaminant segmentation pipeline",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config JSON file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="override the output directory")
    common.add_argument(
        "--deterministic", action="store_true", help="force deterministic kernels"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic datasets")
    p.add_argument("--per-class", type=int, default=20, help="trainval images per class")
    p.add_argument("--dims", type=int, default=96, help="texture image side, px")
    p.add_argument("--scene-dims", type=int, default=160, help="scene image side, px")
    p.add_argument("--scenes", type=int, default=20, help="fastener scenes to render")
    p.add_argument(
        "--no-test-split", action="store_true", help="skip the held-out test split"
    )

    p = sub.add_parser("folds", parents=[common], help="write a k-fold plan")
    p.add_argument("--manifest", type=Path, help="manifest to partition")
    p.add_argument("--k", type=int, help="fold count (default from config)")

    p = sub.add_parser("train", parents=[common], help="run two-phase training")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fold", type=int, help="train a single fold")
    group.add_argument(
        "--all-folds", action="store_true", help="train every fold (default)"
    )

    p = sub.add_parser("evaluate", parents=[common], help="evaluate on the test split")
    p.add_argument("--checkpoint", type=Path, help="trained fold checkpoint (.pt)")
    p.add_argument(
        "--predictions", type=Path, help="JSON of {sample id: predicted class}"
    )
    p.add_argument("--manifest", type=Path, help="override the config manifest")

    p = sub.add_parser("segment", parents=[common], help="run the zero-shot pipeline")
    p.add_argument("--manifest", type=Path, help="override the config manifest")

    p = sub.add_parser("report", parents=[common], help="render curves and figures")
    p.add_argument("--run-dir", type=Path, required=True, help="directory of run artifacts")

    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "folds": cmd_folds,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "segment": cmd_segment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, WeightsUnavailableError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
