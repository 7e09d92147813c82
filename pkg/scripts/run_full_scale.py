"""Full-scale run on the real parasitic-egg dataset with the full-size backends.

Needs the challenge images and COCO-style annotations, the ``effdet``
package, and EfficientNet-B7 ImageNet weights (torchvision download or
``EGGFUSION_B7_WEIGHTS``). A GPU is strongly advised (``EGGFUSION_DEVICE=cuda``).

    python scripts/run_full_scale.py --dataset-root DATA/images \\
        --annotations DATA/annotations.json --out runs/full
"""

import argparse
import json
from pathlib import Path

from eggfusion.cli import main
from eggfusion.config import RunConfig, save_config

TARGETS = {"accuracy": 0.92, "macro_f1": 0.93}
TOLERANCE = 0.03
MISDETECTIONS = 17  # out of 2200 test images


def main_cli() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dataset-root", required=True)
    ap.add_argument("--annotations", required=True)
    ap.add_argument("--out", default="runs/full")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-train", action="store_true", help="reuse existing checkpoints")
    args = ap.parse_args()

    cfg = RunConfig().with_seed(args.seed)
    cfg.paths.dataset_root = args.dataset_root
    cfg.paths.annotations = args.annotations
    cfg.paths.output_dir = args.out
    Path(args.out).mkdir(parents=True, exist_ok=True)
    config = Path(args.out) / "config.json"
    save_config(cfg, config)

    steps = ["split", "predict", "evaluate"] if args.skip_train else ["split", "train", "predict", "evaluate"]
    for cmd in steps:
        code = main([cmd, "--config", str(config)])
        if code:
            raise SystemExit(code)

    rep = json.loads((Path(args.out) / "eval" / "report.json").read_text())
    for key, target in TARGETS.items():
        value = rep[key]
        verdict = "within" if abs(value - target) <= TOLERANCE else "OUTSIDE"
        print(f"{key:9s} {value:.4f}  target {target:.2f} +/- {TOLERANCE:.2f}: {verdict}")
    print(f"misdetections {rep['misdetections']} of {rep['total_objects']} eggs on {rep['total_images']} images (reference {MISDETECTIONS} of 2200)")


if __name__ == "__main__":
    main_cli()
