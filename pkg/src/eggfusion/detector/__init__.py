from .backends import available_backends, create_backend, register
from .core import (
    Detection,
    DetectorModel,
    as_simplex,
    detect,
    detections_to_json,
    nms,
    read_detections,
    train_detector,
    write_detections,
)

__all__ = [
    "Detection",
    "DetectorModel",
    "as_simplex",
    "available_backends",
    "create_backend",
    "detect",
    "detections_to_json",
    "nms",
    "read_detections",
    "register",
    "train_detector",
    "write_detections",
]
