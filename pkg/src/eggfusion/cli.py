"""Command-line entry point: ``eggfusion {synth,split,train,predict,evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration/validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import create_extractor, crop_features, train_svm
from .classifier.svm import SvmModel
from .config import ExtractorConfig, RunConfig, load_config
from .data import AnnotatedImage, load_dataset, load_ground_truth, read_image, split_dataset
from .detector import DetectorModel, detect, detections_to_json, train_detector, write_detections
from .errors import CapabilityError, ConfigError, ContractError, EggFusionError, SchemaError
from .evaluation import evaluate_predictions, export_plots, match_detections, write_report_json
from .fusion import check_compatible, predict_pipeline, read_predictions, write_predictions
from .synth import read_synth_config, synth_generate, write_dataset

log = logging.getLogger("eggfusion")

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name, "msg": record.getMessage()})


def _dump(obj, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _stamp(cfg: RunConfig) -> dict:
    return {"format_version": FORMAT_VERSION, "config_hash": cfg.config_hash()}


# --- commands ------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, synth_config: Optional[str] = None) -> Path:
    """Generate the synthetic dataset into ``paths.dataset_root`` / ``paths.annotations``."""
    scfg = read_synth_config(synth_config) if synth_config else cfg.synth
    dataset = synth_generate(scfg)
    write_dataset(dataset, cfg.paths.dataset_root, cfg.paths.annotations)
    log.info("wrote %d synthetic images to %s", len(dataset), cfg.paths.dataset_root)
    return Path(cfg.paths.annotations)


def cmd_split(cfg: RunConfig) -> dict[str, Path]:
    """Write ``splits/{train,val,test}.json`` image-id manifests."""
    cfg.split.validate()
    dataset = load_dataset(cfg.paths.dataset_root, cfg.paths.annotations)
    parts = split_dataset(dataset, cfg.split)
    out = {}
    for name, part in zip(SPLITS, parts):
        doc = {**_stamp(cfg), "split": name, "seed": cfg.split.seed, "image_ids": [im.image_id for im in part]}
        out[name] = _dump(doc, cfg.paths.splits / f"{name}.json")
    log.info("split sizes %s", {k: len(p) for k, p in zip(SPLITS, parts)})
    return out


def read_manifests(cfg: RunConfig) -> dict[str, list[str]]:
    out = {}
    for name in SPLITS:
        path = cfg.paths.splits / f"{name}.json"
        if not path.exists():
            raise ConfigError(f"split manifest {path} is missing; run `eggfusion split` with this config first")
        out[name] = json.loads(path.read_text())["image_ids"]
    return out


def _split_images(cfg: RunConfig) -> dict[str, list[AnnotatedImage]]:
    manifests = read_manifests(cfg)
    by_id = {im.image_id: im for im in load_dataset(cfg.paths.dataset_root, cfg.paths.annotations)}
    missing = [i for ids in manifests.values() for i in ids if i not in by_id]
    if missing:
        raise SchemaError(f"{len(missing)} manifest ids not in the dataset, e.g. {missing[:5]}")
    return {name: [by_id[i] for i in ids] for name, ids in manifests.items()}


def _gt_crop_features(extractor, images: Sequence[AnnotatedImage]):
    feats, labels = [], []
    for im in images:
        f = crop_features(extractor, im.pixels, im.boxes)
        feats.append(f)
        labels.extend(im.labels)
    return np.vstack(feats) if feats else np.zeros((0, 0)), np.asarray(labels, dtype=np.int64)


def _pred_crop_features(extractor, det_model, images, iou_threshold):
    feats, labels = [], []
    for im in images:
        dets = detect(det_model, im)
        ms = [m for m in match_detections(dets, list(zip(im.boxes, im.labels)), iou_threshold) if m.matched]
        if ms:
            feats.append(crop_features(extractor, im.pixels, [dets[m.pred_index].box for m in ms]))
            labels.extend(m.true_label for m in ms)
    if not feats:
        raise ConfigError("detector produced no matched crops to train the SVM on")
    return np.vstack(feats), np.asarray(labels, dtype=np.int64)


def cmd_train(cfg: RunConfig, stage: str = "all") -> dict[str, Path]:
    """Train ``detector``, ``svm`` or ``all`` (detector first); writes checkpoints and JSONL logs."""
    cfg.validate()
    if stage not in ("detector", "svm", "all"):
        raise ConfigError(f"unknown stage {stage!r}")
    splits = _split_images(cfg)
    ckpt, logs = cfg.paths.checkpoints, cfg.paths.logs
    logs.mkdir(parents=True, exist_ok=True)
    out = {}
    det_model = None

    if stage in ("detector", "all"):
        log_path = logs / "detector.jsonl"
        with open(log_path, "w") as fh:
            def on_epoch(rec):
                fh.write(json.dumps({"stage": "detector", **rec}, sort_keys=True) + "\n")
                fh.flush()

            det_model = train_detector(splits["train"], splits["val"], cfg.detector, seed=cfg.seed, on_epoch=on_epoch)
        out["detector"] = det_model.save(ckpt / "detector", extra={"config_hash": cfg.config_hash()})
        out["detector_log"] = log_path

    if stage in ("svm", "all"):
        extractor = create_extractor(cfg.extractor, seed=cfg.seed)
        if cfg.svm.train_on == "pred":
            det_model = det_model or DetectorModel.load(ckpt / "detector")
            thr = cfg.evaluation.iou_threshold
            X, y = _pred_crop_features(extractor, det_model, splits["train"], thr)
            holdout = _pred_crop_features(extractor, det_model, splits["val"], thr) if splits["val"] else None
        else:
            X, y = _gt_crop_features(extractor, splits["train"])
            holdout = _gt_crop_features(extractor, splits["val"]) if splits["val"] else None
        model = train_svm(X, y, cfg.svm, cal_split=holdout)
        model.extra = {
            "config_hash": cfg.config_hash(),
            "extractor": {"backend": cfg.extractor.backend, "input_side": cfg.extractor.input_side,
                          "weights_path": cfg.extractor.weights_path},
            "seed": cfg.seed,
        }
        out["svm"] = model.save(ckpt / "svm" / "svm.npz")
        log_path = logs / "svm.jsonl"
        log_path.write_text(json.dumps({"stage": "svm", **model.metrics}, sort_keys=True) + "\n")
        out["svm_log"] = log_path
    return out


def load_models(cfg: RunConfig):
    ckpt = cfg.paths.checkpoints
    det_dir, svm_path = ckpt / "detector", ckpt / "svm" / "svm.npz"
    for p in (det_dir / "manifest.json", svm_path):
        if not p.exists():
            raise ConfigError(f"checkpoint {p} is missing; run `eggfusion train --stage all` first")
    det_model = DetectorModel.load(det_dir)
    svm_model = SvmModel.load(svm_path)
    check_compatible(det_model, svm_model)
    ex = svm_model.extra.get("extractor", {})
    extractor = create_extractor(ExtractorConfig(**ex) if ex else cfg.extractor, seed=svm_model.extra.get("seed", cfg.seed))
    return det_model, svm_model, extractor


def _input_images(cfg: RunConfig, input_path: Optional[str]) -> list[tuple[str, Optional[Path], Optional[AnnotatedImage]]]:
    if input_path is None:
        return [(im.image_id, None, im) for im in _split_images(cfg)["test"]]
    path = Path(input_path)
    if path.is_dir():
        files = sorted(p for p in path.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        return [(p.relative_to(path).as_posix(), p, None) for p in files]
    if path.is_file():
        return [(path.name, path, None)]
    raise ConfigError(f"input {input_path} does not exist")


def cmd_predict(
    cfg: RunConfig, input_path: Optional[str] = None, out_path: Optional[str] = None, strict: bool = False
) -> tuple[Path, int]:
    """Fused predictions for an image, a directory, or (default) the test split.

    Returns the predictions path and the exit code: unreadable images become
    error entries, and only make the exit code 1 when ``strict``.
    """
    det_model, svm_model, extractor = load_models(cfg)
    items = _input_images(cfg, input_path)
    preds, raw, ids, errors = [], [], [], []
    for image_id, path, img in items:
        try:
            pixels = img.pixels if img is not None else read_image(path)
        except (OSError, ValueError, ContractError) as exc:
            errors.append({"image_id": image_id, "error": str(exc)})
            continue
        ids.append(image_id)
        dets = detect(det_model, pixels)
        preds.extend(predict_pipeline(det_model, svm_model, extractor, pixels, image_id=image_id, detections=dets))
        raw.append(detections_to_json(image_id, dets))
    out_file = Path(out_path) if out_path else Path(cfg.paths.output_dir) / "predictions.json"
    out_file.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out_file, preds, ids, errors, cfg.config_hash())
    write_detections(raw, out_file.with_name(out_file.stem + "_detections.json"))
    log.info("%d images, %d predictions, %d errors", len(ids), len(preds), len(errors))
    return out_file, 1 if (strict and errors) else 0


def cmd_evaluate(
    cfg: RunConfig,
    predictions_path: Optional[str] = None,
    ground_truth_path: Optional[str] = None,
    out_dir: Optional[str] = None,
) -> dict[str, Path]:
    """Report JSON, confusion CSV and the three plots for a predictions file."""
    cfg.evaluation.validate()
    pred_file = Path(predictions_path) if predictions_path else Path(cfg.paths.output_dir) / "predictions.json"
    if not pred_file.exists():
        raise ConfigError(f"predictions file {pred_file} not found")
    preds, images, _ = read_predictions(pred_file)
    gt = load_ground_truth(ground_truth_path or cfg.paths.annotations)
    unknown = sorted(set(images) - set(gt))
    if unknown:
        raise SchemaError(
            f"{len(unknown)} predicted image ids are absent from the ground truth: " + ", ".join(unknown[:20])
        )
    by_image: dict[str, list] = {}
    for p in preds:
        by_image.setdefault(p.image_id, []).append(p)
    ev = cfg.evaluation
    reports = evaluate_predictions(
        by_image,
        {i: gt[i] for i in images},
        iou_threshold=ev.iou_threshold,
        bins=ev.bins,
        histogram_source=ev.histogram_source,
        label_views={"detector": lambda p: p.det_label, "svm": lambda p: p.svm_label},
    )
    fused = reports["fused"]
    fused.extra = {
        "config_hash": cfg.config_hash(),
        "iou_threshold": ev.iou_threshold,
        "views": {
            name: {k: r.to_json()[k] for k in ("accuracy", "accuracy_with_misdetections", "macro_f1",
                                                "per_class_f1", "confusion")}
            for name, r in reports.items() if name != "fused"
        },
    }
    out = Path(out_dir) if out_dir else Path(cfg.paths.output_dir) / "eval"
    paths = export_plots(fused, out)
    log.info("accuracy %s macro-F1 %.4f misdetections %d", fused.accuracy, fused.macro_f1, fused.misdetections)
    return paths


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. detector.epochs=5 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="eggfusion", description="Parasitic egg detection with detector+SVM fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--synth-config", help="key = value generator config (overrides the synth section)")
    sub.add_parser("split", parents=[common], help="write train/val/test manifests")
    p = sub.add_parser("train", parents=[common], help="train the detector and/or SVM")
    p.add_argument("--stage", choices=("detector", "svm", "all"), default="all")
    p = sub.add_parser("predict", parents=[common], help="run the fused pipeline")
    p.add_argument("--input", help="image file or directory (default: test split)")
    p.add_argument("--out", help="predictions JSON path")
    p.add_argument("--strict", action="store_true", help="exit 1 if any image fails to load")
    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("--predictions", help="predictions JSON (default: <output_dir>/predictions.json)")
    p.add_argument("--ground-truth", help="COCO-style annotation file (default: paths.annotations)")
    p.add_argument("--out", help="report directory (default: <output_dir>/eval)")
    return parser


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("eggfusion")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        cfg = load_config(args.config)
        if args.set:
            cfg = cfg.with_overrides(args.set)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg.validate()
        code = 0
        if args.command == "synth":
            cmd_synth(cfg, args.synth_config)
        elif args.command == "split":
            cmd_split(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.stage)
        elif args.command == "predict":
            _, code = cmd_predict(cfg, args.input, args.out, args.strict)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.predictions, args.ground_truth, args.out)
        return code
    except (ConfigError, SchemaError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CapabilityError, EggFusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
