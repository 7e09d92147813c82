"""Average-decision fusion of detector and SVM class scores, and the end-to-end pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boxes import BoundingBox
from .categories import CATEGORY_NAMES
from .classifier.extractors import FeatureExtractor, crop_features
from .classifier.svm import SvmModel
from .data import AnnotatedImage
from .detector.core import DetectorModel, detect
from .errors import ConfigError, ContractError
from .scores import argmax_lowest, as_simplex

FORMAT_VERSION = 1


def fuse_average(p_det, p_svm) -> np.ndarray:
    """Componentwise mean of two probability vectors."""
    a = as_simplex(p_det)
    b = as_simplex(p_svm)
    if a.shape != b.shape:
        raise ContractError(f"score vectors differ in length: {a.size} vs {b.size}")
    return (a + b) / 2.0


def final_label(fused) -> tuple[int, float]:
    """(argmax with lowest-index tie-break, winning probability)."""
    p = as_simplex(fused)
    k = argmax_lowest(p)
    return k, float(p[k])


@dataclass(frozen=True)
class FinalPrediction:
    image_id: str
    box: BoundingBox
    fused: tuple[float, ...]
    label: int
    confidence: float
    det_scores: tuple[float, ...]
    svm_scores: tuple[float, ...]

    @classmethod
    def from_scores(cls, image_id: str, box: BoundingBox, p_det, p_svm) -> "FinalPrediction":
        fused = fuse_average(p_det, p_svm)
        label, conf = final_label(fused)
        return cls(
            image_id,
            box,
            tuple(float(x) for x in fused),
            label,
            conf,
            tuple(float(x) for x in p_det),
            tuple(float(x) for x in p_svm),
        )

    @property
    def det_label(self) -> int:
        return argmax_lowest(np.asarray(self.det_scores))

    @property
    def svm_label(self) -> int:
        return argmax_lowest(np.asarray(self.svm_scores))

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "bbox": self.box.as_list(),
            "label_id": self.label,
            "label_name": CATEGORY_NAMES[self.label],
            "confidence": self.confidence,
            "fused_scores": list(self.fused),
            "det_scores": list(self.det_scores),
            "svm_scores": list(self.svm_scores),
        }

    @classmethod
    def from_json(cls, rec: dict) -> "FinalPrediction":
        return cls(
            str(rec["image_id"]),
            BoundingBox(*(float(v) for v in rec["bbox"])),
            tuple(float(x) for x in rec["fused_scores"]),
            int(rec["label_id"]),
            float(rec["confidence"]),
            tuple(float(x) for x in rec["det_scores"]),
            tuple(float(x) for x in rec["svm_scores"]),
        )


def check_compatible(det_model: DetectorModel, svm_model: SvmModel) -> None:
    if det_model.categories != svm_model.categories:
        raise ConfigError("detector and SVM were trained with different category maps")


def predict_pipeline(
    det_model: DetectorModel,
    svm_model: SvmModel,
    extractor: FeatureExtractor,
    img: AnnotatedImage | np.ndarray,
    image_id: Optional[str] = None,
    detections: Optional[list] = None,
) -> list[FinalPrediction]:
    """Detect, re-score every surviving box with the SVM, and fuse.

    An empty list means the detector found nothing (a mis-detection); the
    classifier is never run on the whole image as a fallback. Precomputed
    ``detections`` skip the detector call.
    """
    check_compatible(det_model, svm_model)
    if image_id is None:
        image_id = img.image_id if isinstance(img, AnnotatedImage) else ""
    pixels = img.pixels if isinstance(img, AnnotatedImage) else img
    if detections is None:
        detections = detect(det_model, pixels)
    if not detections:
        return []
    feats = crop_features(extractor, pixels, [d.box for d in detections])
    p_svm = svm_model.predict_proba(feats)
    return [FinalPrediction.from_scores(image_id, d.box, d.scores, p) for d, p in zip(detections, p_svm)]


def write_predictions(
    path: str | Path,
    predictions: Sequence[FinalPrediction],
    images: Sequence[str],
    errors: Sequence[dict] = (),
    config_hash: str = "",
) -> None:
    """Final predictions file.

    ``images`` lists every image that was processed, so images with no
    detection stay visible (they also appear under ``no_detections``).
    """
    with_preds = {p.image_id for p in predictions}
    doc = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "images": list(images),
        "predictions": [p.to_json() for p in predictions],
        "no_detections": [i for i in images if i not in with_preds],
        "errors": list(errors),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_predictions(path: str | Path) -> tuple[list[FinalPrediction], list[str], list[dict]]:
    """Inverse of :func:`write_predictions`: (predictions, processed image ids, errors).

    A bare JSON array of prediction records is accepted too.
    """
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        preds = [FinalPrediction.from_json(r) for r in doc]
        return preds, sorted({p.image_id for p in preds}), []
    preds = [FinalPrediction.from_json(r) for r in doc["predictions"]]
    images = doc.get("images") or sorted({p.image_id for p in preds})
    return preds, list(images), list(doc.get("errors", []))
