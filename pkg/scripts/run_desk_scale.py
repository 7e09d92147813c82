"""Desk-scale rehearsal: synthetic data, tiny backends, full CLI pipeline.

    python scripts/run_desk_scale.py --out runs/desk
"""

import argparse
import json
import time
from pathlib import Path

from eggfusion.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(config: Path, seed: int) -> None:
    for cmd in ("synth", "split", "train", "predict", "evaluate"):
        t0 = time.perf_counter()
        code = main([cmd, "--config", str(config), "--seed", str(seed)])
        print(f"{cmd:9s} exit {code}  {time.perf_counter() - t0:7.1f}s")
        if code:
            raise SystemExit(code)


def main_cli() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    ap.add_argument("--out", default="runs/desk", help="output directory (data goes under <out>/data)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    cfg = json.loads(Path(args.config).read_text())
    cfg["paths"] = {
        "dataset_root": str(out / "data" / "images"),
        "annotations": str(out / "data" / "annotations.json"),
        "output_dir": str(out),
    }
    out.mkdir(parents=True, exist_ok=True)
    config = out / "config.json"
    config.write_text(json.dumps(cfg, indent=2) + "\n")
    run(config, args.seed)

    rep = json.loads((out / "eval" / "report.json").read_text())
    print(f"matched {rep['matched']}/{rep['total_objects']}  misdetections {rep['misdetections']}")
    for name, view in [("fused", rep), *rep["views"].items()]:
        print(f"{name:9s} accuracy {view['accuracy']:.4f}  macro-F1 {view['macro_f1']:.4f}")


if __name__ == "__main__":
    main_cli()
