"""Backend-neutral detector contract: training loop, inference, NMS, checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..boxes import BoundingBox, iou
from ..categories import category_map
from ..config import DetectorConfig
from ..data import AnnotatedImage, preprocess_for_detector
from ..errors import ConfigError
from ..scores import as_simplex  # noqa: F401  (re-exported)
from .backends import create_backend

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
WEIGHTS_FILE = "weights.pt"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    scores: tuple[float, ...]
    confidence: float

    @classmethod
    def from_scores(cls, box: BoundingBox, scores) -> "Detection":
        p = np.asarray(scores, dtype=np.float64)
        p = p / p.sum()
        return cls(box, tuple(float(x) for x in p), float(p.max()))

    @property
    def label(self) -> int:
        return int(np.argmax(self.scores))

    def to_json(self) -> dict:
        return {"bbox": self.box.as_list(), "scores": list(self.scores), "confidence": self.confidence}


def nms(candidates: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy class-agnostic suppression over confidence-sorted candidates.

    A candidate is dropped when its IOU with an already kept box exceeds
    ``iou_threshold``.
    """
    kept: list[Detection] = []
    for det in candidates:
        if all(iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


@dataclass
class DetectorModel:
    backend: object
    config: DetectorConfig
    categories: dict[int, str] = field(default_factory=category_map)
    training_log: list[dict] = field(default_factory=list)
    seed: int = 0

    @property
    def deterministic(self) -> bool:
        return bool(getattr(self.backend, "deterministic", False))

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "detector",
            "backend": self.config.backbone_id,
            "config": asdict(self.config),
            "categories": {str(k): v for k, v in self.categories.items()},
            "training_log": self.training_log,
            "deterministic": self.deterministic,
            "seed": self.seed,
        }

    def save(self, directory: str | Path, extra: Optional[dict] = None) -> Path:
        import torch

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.backend.state_dict(), directory / WEIGHTS_FILE)
        manifest = self.manifest()
        manifest.update(extra or {})
        (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "DetectorModel":
        import torch

        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST_FILE).read_text())
        if manifest.get("kind") != "detector" or manifest.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"{directory} is not a version-{FORMAT_VERSION} detector checkpoint")
        config = DetectorConfig(**manifest["config"])
        # Weights come from the checkpoint; never fetch pretrained ones on reload.
        config.pretrained_backbone = False
        backend = create_backend(config, manifest["seed"])
        state = torch.load(directory / WEIGHTS_FILE, map_location="cpu", weights_only=True)
        backend.load_state_dict(state)
        config.pretrained_backbone = manifest["config"].get("pretrained_backbone", True)
        return cls(
            backend=backend,
            config=config,
            categories={int(k): v for k, v in manifest["categories"].items()},
            training_log=manifest["training_log"],
            seed=manifest["seed"],
        )


def _batch_arrays(images: Sequence[AnnotatedImage], side: int):
    pixels, targets = [], []
    for img in images:
        norm, boxes = preprocess_for_detector(img, side)
        pixels.append(norm.pixels)
        targets.append(
            (
                np.asarray([b.as_list() for b in boxes], dtype=np.float32).reshape(-1, 4),
                np.asarray(img.labels, dtype=np.int64),
            )
        )
    return np.stack(pixels), targets


def train_detector(
    train: Sequence[AnnotatedImage],
    val: Sequence[AnnotatedImage],
    config: DetectorConfig,
    seed: int = 0,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> DetectorModel:
    """Train the configured backend for ``config.epochs`` epochs.

    The returned model's ``training_log`` holds one record per epoch with the
    mean training loss (and validation loss when ``val`` is non-empty).
    """
    config.validate()
    if len(train) == 0:
        raise ConfigError("training set is empty")
    backend = create_backend(config, seed)
    if not backend.deterministic:
        log.warning("backend %s does not guarantee deterministic training", config.backbone_id)
    training_log = []
    n = len(train)
    for epoch in range(config.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            pixels, targets = _batch_arrays(batch, config.input_side)
            losses.append(backend.train_step(pixels, targets))
        record = {"epoch": epoch + 1, "loss": float(np.mean(losses))}
        if len(val):
            val_losses = []
            for start in range(0, len(val), config.batch_size):
                pixels, targets = _batch_arrays(val[start : start + config.batch_size], config.input_side)
                val_losses.append(backend.eval_loss(pixels, targets))
            record["val_loss"] = float(np.mean(val_losses))
        if not backend.deterministic:
            record["nondeterministic"] = True
        training_log.append(record)
        log.info("detector epoch %d/%d loss %.4f", epoch + 1, config.epochs, record["loss"])
        if on_epoch is not None:
            on_epoch(record)
    return DetectorModel(backend=backend, config=config, training_log=training_log, seed=seed)


def detect(model: DetectorModel, img: AnnotatedImage | np.ndarray) -> list[Detection]:
    """Run the detector on one image; boxes come back in original pixels.

    Candidates below ``score_threshold`` are dropped, the rest sorted by
    confidence (descending) and passed through :func:`nms`. Ground-truth
    annotations are never read.
    """
    pixels = img.pixels if isinstance(img, AnnotatedImage) else img
    cfg = model.config
    norm, _ = preprocess_for_detector(AnnotatedImage("_", array=pixels), cfg.input_side)
    h, w = pixels.shape[:2]
    boxes, _, probs = model.backend.predict_raw(norm.pixels)
    dets = []
    for raw, p in zip(boxes, probs):
        box = norm.to_original(BoundingBox(*(float(v) for v in raw))).clamp(w, h)
        if not box.is_valid():
            continue
        det = Detection.from_scores(box, p)
        if det.confidence >= cfg.score_threshold:
            dets.append(det)
    dets.sort(key=lambda d: -d.confidence)
    return nms(dets, cfg.nms_iou_threshold)


def detections_to_json(image_id: str, detections: Sequence[Detection]) -> dict:
    return {"image_id": image_id, "detections": [d.to_json() for d in detections]}


def write_detections(records: Sequence[dict], path: str | Path) -> None:
    """Write ``[{image_id, detections: [{bbox, scores, confidence}]}]``."""
    Path(path).write_text(json.dumps(list(records), indent=1) + "\n")


def read_detections(path: str | Path) -> dict[str, list[Detection]]:
    out = {}
    for rec in json.loads(Path(path).read_text()):
        out[rec["image_id"]] = [
            Detection(BoundingBox(*d["bbox"]), tuple(d["scores"]), float(d["confidence"])) for d in rec["detections"]
        ]
    return out
