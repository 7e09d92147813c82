"""Dataset loading, stratified splitting, cropping and resize/normalize transforms."""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .categories import (
    CATEGORY_NAMES,
    CLASSIFIER_SIDE,
    DETECTOR_SIDE,
    IMAGENET_MEAN,
    IMAGENET_STD,
    NUM_CLASSES,
    category_id,
)
from .config import SplitSpec
from .errors import ConfigError, ContractError, LoadError, SchemaError

log = logging.getLogger(__name__)

_MEAN = np.asarray(IMAGENET_MEAN, dtype=np.float32)
_STD = np.asarray(IMAGENET_STD, dtype=np.float32)


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    category: int


@dataclass(frozen=True, eq=False)
class AnnotatedImage:
    """An image plus its ground-truth annotations.

    Pixels are either held in memory (``array``) or read from ``path`` on
    every access, so a full-size dataset never sits in RAM at once.
    """

    image_id: str
    annotations: tuple[Annotation, ...] = ()
    array: Optional[np.ndarray] = field(default=None, repr=False)
    path: Optional[Path] = None
    width: Optional[int] = None
    height: Optional[int] = None

    @property
    def pixels(self) -> np.ndarray:
        if self.array is not None:
            return self.array
        if self.path is None:
            raise ValueError(f"image {self.image_id} has neither pixels nor a path")
        return read_image(self.path)

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) without decoding pixels when possible."""
        if self.width is not None and self.height is not None:
            return self.width, self.height
        h, w = self.pixels.shape[:2]
        return w, h

    @property
    def category(self) -> int:
        """Stratification key: label of the first annotation, -1 when unannotated."""
        return self.annotations[0].category if self.annotations else -1

    @property
    def boxes(self) -> list[BoundingBox]:
        return [a.box for a in self.annotations]

    @property
    def labels(self) -> list[int]:
        return [a.category for a in self.annotations]


@dataclass(frozen=True, eq=False)
class NormalizedImage:
    """Square, channel-normalized network input with its back-mapping.

    ``scale_x``/``scale_y`` multiply normalized-frame coordinates to give
    original-image pixels.
    """

    pixels: np.ndarray
    scale_x: float
    scale_y: float

    @property
    def side(self) -> int:
        return int(self.pixels.shape[0])

    def to_original(self, box: BoundingBox) -> BoundingBox:
        return box.scale(self.scale_x, self.scale_y)

    def to_normalized(self, box: BoundingBox) -> BoundingBox:
        return box.scale(1.0 / self.scale_x, 1.0 / self.scale_y)


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return to_rgb(arr)


def to_rgb(arr: np.ndarray) -> np.ndarray:
    """Coerce an image array to H×W×3 uint8, warning when channels change."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        warnings.warn("single-channel image replicated to 3 channels", stacklevel=2)
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 1:
        warnings.warn("single-channel image replicated to 3 channels", stacklevel=2)
        arr = np.repeat(arr, 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 4:
        warnings.warn("alpha channel dropped", stacklevel=2)
        arr = arr[:, :, :3]
    elif arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"unsupported image shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError(f"empty image of shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return np.ascontiguousarray(arr)


# --- loading -----------------------------------------------------------------


def _parse_annotations(annotation_path: str | Path) -> list[tuple[dict, list[Annotation]]]:
    """Validate a COCO-style file; returns (image record, valid annotations) pairs."""
    try:
        doc = json.loads(Path(annotation_path).read_text())
    except FileNotFoundError as exc:
        raise SchemaError(f"annotation file not found: {annotation_path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"annotation file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("annotation file must hold a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise SchemaError(f"annotation file lacks a top-level {key!r} array")

    file_cat = {}
    for c in doc["categories"]:
        try:
            file_cat[c["id"]] = category_id(c["name"])
        except KeyError as exc:
            raise SchemaError(f"unknown category {c.get('name')!r}") from exc

    images = {}
    for rec in doc["images"]:
        if not isinstance(rec, dict) or "id" not in rec or "file_name" not in rec:
            raise SchemaError(f"malformed image record {rec!r}")
        images[rec["id"]] = rec

    per_image: dict = {k: [] for k in images}
    for rec in doc["annotations"]:
        try:
            img_key, bbox, cat = rec["image_id"], rec["bbox"], rec["category_id"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed annotation record {rec!r}") from exc
        if img_key not in images:
            raise SchemaError(f"annotation refers to unknown image id {img_key!r}")
        if cat not in file_cat:
            raise SchemaError(f"annotation uses undeclared category id {cat!r}")
        if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
            raise SchemaError(f"bbox must have 4 numbers, got {bbox!r}")
        box = BoundingBox.from_xywh(*bbox)
        info = images[img_key]
        if not box.is_valid() or not box.intersects_image(info.get("width", math.inf), info.get("height", math.inf)):
            warnings.warn(f"skipping degenerate box {bbox} on image {info['file_name']}", stacklevel=3)
            continue
        per_image[img_key].append(Annotation(box, file_cat[cat]))
    return [(images[k], per_image[k]) for k in images]


def load_dataset(root_path: str | Path, annotation_path: str | Path) -> list[AnnotatedImage]:
    """Load a COCO-style annotation file and index the images under ``root_path``.

    Boxes are stored on disk as ``[x, y, w, h]`` and converted to corners.
    Degenerate boxes are dropped with a warning; images left without any
    valid annotation are skipped. Missing or unreadable image files raise a
    single :class:`LoadError` listing every failure. ``image_id`` is the
    record's ``file_name``.
    """
    root = Path(root_path)
    dataset, failures = [], []
    for rec, anns in _parse_annotations(annotation_path):
        if not anns:
            log.info("image %s has no valid annotations; skipped", rec.get("file_name"))
            continue
        path = root / rec["file_name"]
        try:
            with Image.open(path) as im:
                w, h = im.size
        except (OSError, ValueError) as exc:
            failures.append((rec["file_name"], str(exc)))
            continue
        dataset.append(
            AnnotatedImage(
                image_id=str(rec["file_name"]),
                annotations=tuple(anns),
                path=path,
                width=int(w),
                height=int(h),
            )
        )
    if failures:
        raise LoadError(failures)
    log.info("loaded %d images; per-category counts %s", len(dataset), category_counts(dataset))
    return dataset


def load_ground_truth(annotation_path: str | Path) -> dict[str, list[tuple[BoundingBox, int]]]:
    """Boxes and labels per image id, without touching image files."""
    return {
        str(rec["file_name"]): [(a.box, a.category) for a in anns]
        for rec, anns in _parse_annotations(annotation_path)
    }


def category_counts(dataset: Sequence[AnnotatedImage]) -> dict[str, int]:
    counts = Counter(img.category for img in dataset)
    return {CATEGORY_NAMES[c] if c >= 0 else "unlabeled": counts[c] for c in sorted(counts)}


def write_coco(dataset: Sequence[AnnotatedImage], path: str | Path) -> None:
    """Write annotations of ``dataset`` in the COCO-style schema ``load_dataset`` reads."""
    images, annotations = [], []
    for i, img in enumerate(dataset):
        w, h = img.size
        images.append({"id": i, "file_name": img.image_id, "width": int(w), "height": int(h)})
        for a in img.annotations:
            annotations.append(
                {"id": len(annotations), "image_id": i, "bbox": a.box.to_xywh(), "category_id": int(a.category)}
            )
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i, "name": n} for i, n in enumerate(CATEGORY_NAMES)],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


# --- splitting ---------------------------------------------------------------


def split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Per-group sizes: floor the val/test shares, remainder goes to train."""
    # The small epsilon keeps e.g. 70 * (1/7) from flooring to 9.
    n_val = int(math.floor(n * spec.val_frac + 1e-9))
    n_test = int(math.floor(n * spec.test_frac + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_dataset(dataset: Sequence[AnnotatedImage], spec: SplitSpec):
    """Stratified, seeded train/val/test split; returns three lists.

    Each category is shuffled with a generator seeded from ``spec.seed`` and
    divided by :func:`split_counts`. Output lists keep the input order.
    """
    spec.validate()
    if len(dataset) == 0:
        raise ConfigError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    groups: dict[int, list[int]] = {}
    for i, img in enumerate(dataset):
        groups.setdefault(img.category, []).append(i)
    assign = np.zeros(len(dataset), dtype=np.int8)
    for cat in sorted(groups):
        idx = np.asarray(groups[cat])
        idx = idx[rng.permutation(len(idx))]
        n_train, n_val, _ = split_counts(len(idx), spec)
        assign[idx[n_train : n_train + n_val]] = 1
        assign[idx[n_train + n_val :]] = 2
    parts = ([], [], [])
    for i, img in enumerate(dataset):
        parts[assign[i]].append(img)
    return parts


# --- transforms --------------------------------------------------------------


def normalize_pixels(arr: np.ndarray) -> np.ndarray:
    return ((arr.astype(np.float32) / 255.0) - _MEAN) / _STD


def resize_normalize(arr: np.ndarray, side: int) -> NormalizedImage:
    arr = to_rgb(arr)
    h, w = arr.shape[:2]
    scaled = arr.astype(np.float32) / 255.0
    if (h, w) != (side, side):
        scaled = cv2.resize(scaled, (side, side), interpolation=cv2.INTER_LINEAR)
    pixels = (scaled - _MEAN) / _STD
    return NormalizedImage(np.ascontiguousarray(pixels, dtype=np.float32), w / side, h / side)


def preprocess_for_detector(img: AnnotatedImage, side: int = DETECTOR_SIDE):
    """Resize to ``side``×``side`` and normalize; returns (NormalizedImage, rescaled GT boxes)."""
    norm = resize_normalize(img.pixels, side)
    return norm, [norm.to_normalized(b) for b in img.boxes]


def preprocess_for_classifier(crop: np.ndarray, side: int = CLASSIFIER_SIDE) -> NormalizedImage:
    return resize_normalize(crop, side)


def crop_region(width: int, height: int, box: BoundingBox) -> tuple[int, int, int, int]:
    """Integer pixel region (x0, y0, x1, y1) covered by ``box`` after clamping."""
    c = box.clamp(width, height)
    if not c.is_valid():
        raise ContractError(f"box {box.as_list()} lies outside the {width}x{height} image")
    x0, y0 = int(math.floor(c.xmin)), int(math.floor(c.ymin))
    x1, y1 = int(math.ceil(c.xmax)), int(math.ceil(c.ymax))
    return x0, y0, max(x1, x0 + 1), max(y1, y0 + 1)


def crop_box(img: AnnotatedImage | np.ndarray, box: BoundingBox) -> np.ndarray:
    """Copy of the box region clamped to the image; no padding."""
    arr = img.pixels if isinstance(img, AnnotatedImage) else np.asarray(img)
    h, w = arr.shape[:2]
    x0, y0, x1, y1 = crop_region(w, h, box)
    return arr[y0:y1, x0:x1].copy()


def check_num_classes(labels: Sequence[int]) -> None:
    bad = [l for l in labels if not 0 <= l < NUM_CLASSES]
    if bad:
        raise SchemaError(f"labels outside [0, {NUM_CLASSES}): {sorted(set(bad))}")
