#!/usr/bin/env python3
"""End-to-end desk-scale experiment on synthetic textures: generate the
dataset, build the 5-fold plan, run the two-phase protocol on every fold,
evaluate the best checkpoint on the held-out split, and render reports."""

import argparse
import json
import sys
from pathlib import Path

from texsort.cli import main as cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("desk_run"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument(
        "--quick", action="store_true", help="2-epoch phases for a fast smoke run"
    )
    args = ap.parse_args()

    out: Path = args.out
    data_dir = out / "data"
    run_dir = out / "run"
    rc = cli(
        [
            "synth",
            "--per-class", str(args.per_class),
            "--scenes", "0",
            "--seed", str(args.seed),
            "--out", str(data_dir),
        ]
    )
    if rc:
        return rc

    config = {
        "manifest": str((data_dir / "textures" / "manifest.json").resolve()),
        "backbone": "TinyConv",
        "seed": args.seed,
        "out_dir": str(run_dir.resolve()),
        "folds": {"k": 5},
        "augment": {
            "max_rotation_deg": 10,
            "max_width_shift_frac": 0.05,
            "max_height_shift_frac": 0.05,
            "max_zoom_frac": 0.05,
        },
    }
    if args.quick:
        config["train"] = {"max_epochs_phase1": 2, "max_epochs_phase2": 2}
    config_path = out / "run.json"
    out.mkdir(parents=True, exist_ok=True)
    config_path.write_text(json.dumps(config, indent=2) + "\n")

    rc = cli(["train", "--config", str(config_path), "--all-folds"])
    if rc:
        return rc
    best = json.loads((run_dir / "summary.json").read_text())["best_fold"]
    rc = cli(
        [
            "evaluate",
            "--config", str(config_path),
            "--checkpoint", str(run_dir / f"fold{best}.pt"),
            "--out", str(out / "eval"),
        ]
    )
    if rc:
        return rc
    rc = cli(["report", "--run-dir", str(run_dir)])
    if rc:
        return rc
    print(f"all artifacts in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
