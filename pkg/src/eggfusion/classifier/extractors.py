"""Frozen feature extractors producing 2560-wide pooled descriptors."""

from __future__ import annotations

import os
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..categories import FEATURE_DIM
from ..config import ExtractorConfig
from ..device import get_device
from ..data import NormalizedImage, crop_box, preprocess_for_classifier
from ..errors import CapabilityError, ContractError

WEIGHTS_ENV = "EGGFUSION_B7_WEIGHTS"

_REGISTRY: dict[str, Callable[[ExtractorConfig, int], "FeatureExtractor"]] = {}


def register(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory

    return deco


class FeatureExtractor:
    """Wraps a frozen torch module mapping (B, 3, S, S) to (B, 2560)."""

    def __init__(self, name: str, module: nn.Module, input_side: int):
        self.name = name
        self.input_side = input_side
        self.device = get_device()
        self.module = module.to(self.device).eval()
        for p in self.module.parameters():
            p.requires_grad_(False)

    def _check(self, crop: NormalizedImage) -> None:
        if crop.pixels.shape != (self.input_side, self.input_side, 3):
            raise ContractError(
                f"extractor {self.name} expects {self.input_side}x{self.input_side}x3 input, "
                f"got {crop.pixels.shape}"
            )

    @torch.no_grad()
    def __call__(self, crops: list[NormalizedImage]) -> np.ndarray:
        for c in crops:
            self._check(c)
        x = torch.from_numpy(np.stack([c.pixels.transpose(2, 0, 1) for c in crops]).astype(np.float32))
        feats = self.module(x.to(self.device)).double().cpu().numpy()
        if feats.shape[1] != FEATURE_DIM:
            raise ContractError(f"extractor {self.name} produced {feats.shape[1]} features, expected {FEATURE_DIM}")
        return feats


def extract_features(extractor: FeatureExtractor, crop: NormalizedImage) -> np.ndarray:
    """2560-vector for one normalized crop; deterministic for a frozen extractor."""
    return extractor([crop])[0]


def create_extractor(config: ExtractorConfig, seed: int = 0) -> FeatureExtractor:
    config.validate()
    try:
        factory = _REGISTRY[config.backend]
    except KeyError:
        raise CapabilityError(f"unknown feature extractor {config.backend!r}; registered: {sorted(_REGISTRY)}") from None
    return factory(config, seed)


class RandomConvFeatures(nn.Module):
    """Fixed random-weight CNN with 1x1 + 2x2 average pooling of 512 maps."""

    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 32, 5, stride=2, padding=2),
            nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(64, 128, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(128, 512, 3, stride=2, padding=1),
            nn.ReLU(),
        )

    def forward(self, x):
        f = self.body(x)
        g = F.adaptive_avg_pool2d(f, 1).flatten(1)
        q = F.adaptive_avg_pool2d(f, 2).flatten(1)
        return torch.cat([g, q], dim=1)


@register("tiny")
def _tiny(config: ExtractorConfig, seed: int) -> FeatureExtractor:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = RandomConvFeatures()
    return FeatureExtractor("tiny", module, config.input_side)


@register("efficientnet_b7")
def _b7(config: ExtractorConfig, seed: int) -> FeatureExtractor:
    """ImageNet-pretrained EfficientNet-B7 with the classifier head removed.

    Weights come from ``config.weights_path``, the ``EGGFUSION_B7_WEIGHTS``
    environment variable, or torchvision's download cache, in that order.
    """
    from torchvision.models import EfficientNet_B7_Weights, efficientnet_b7

    model = efficientnet_b7(weights=None)
    path = config.weights_path or os.environ.get(WEIGHTS_ENV)
    try:
        if path:
            state = torch.load(path, map_location="cpu", weights_only=True)
        else:
            state = EfficientNet_B7_Weights.IMAGENET1K_V1.get_state_dict(progress=False)
        model.load_state_dict(state)
    except Exception as exc:
        raise CapabilityError(
            f"pretrained EfficientNet-B7 weights unavailable ({exc}); set {WEIGHTS_ENV} to a local state_dict"
        ) from exc
    model.classifier = nn.Identity()
    return FeatureExtractor("efficientnet_b7", model, config.input_side)


def crop_features(extractor: FeatureExtractor, pixels: np.ndarray, boxes, batch_size: int = 16) -> np.ndarray:
    """Features for each box of one image: crop, resize/normalize, extract."""
    crops = [preprocess_for_classifier(crop_box(pixels, b), extractor.input_side) for b in boxes]
    if not crops:
        return np.zeros((0, FEATURE_DIM))
    return np.vstack([extractor(crops[i : i + batch_size]) for i in range(0, len(crops), batch_size)])
