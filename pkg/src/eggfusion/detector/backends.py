"""Detector backend registry.

A backend owns the network, loss and optimizer. It works entirely in the
square normalized input frame and exposes:

    train_step(pixels, targets) -> float     # one optimizer step, mean loss
    eval_loss(pixels, targets) -> float      # loss without updating weights
    predict_raw(pixels) -> (boxes, gate, probs)
    state_dict() / load_state_dict(state)
    deterministic: bool

``pixels`` is a (B, S, S, 3) float array, ``targets`` a list of
``(boxes[N, 4] corner form, labels[N])`` per image. ``predict_raw`` takes one
(S, S, 3) image and returns candidate boxes (K, 4), a backend-specific
objectness/gate score (K,), and 11-way class probabilities (K, 11).
"""

from __future__ import annotations

from typing import Callable

from ..config import DetectorConfig
from ..errors import CapabilityError

_REGISTRY: dict[str, Callable] = {}


def register(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory

    return deco


def available_backends() -> list[str]:
    _load_builtin()
    return sorted(_REGISTRY)


def create_backend(config: DetectorConfig, seed: int):
    _load_builtin()
    try:
        factory = _REGISTRY[config.backbone_id]
    except KeyError:
        raise CapabilityError(
            f"unknown detector backend {config.backbone_id!r}; registered: {sorted(_REGISTRY)}"
        ) from None
    return factory(config, seed)


def _load_builtin() -> None:
    from . import efficientdet, tiny  # noqa: F401  (registration side effect)
