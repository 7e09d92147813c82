"""Configuration dataclasses for every pipeline stage.

All defaults follow the reference experimental setup (512/600 resize,
20 epochs, batch 4, learning rate 2e-4, C=5 with an RBF kernel, 60/20/20
split). ``RunConfig`` nests them and round-trips through JSON.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .categories import CLASSIFIER_SIDE, DETECTOR_SIDE, NUM_CLASSES
from .errors import ConfigError


@dataclass
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs):
            raise ConfigError(f"split fractions must be non-negative, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {fracs} (sum {sum(fracs)})")


@dataclass
class SynthConfig:
    image_size: int = 128
    per_class_count: int = 10
    noise_sigma: float = 6.0
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 32:
            raise ConfigError("synthetic image_size must be >= 32")
        if self.per_class_count < 0:
            raise ConfigError("per_class_count must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


@dataclass
class DetectorConfig:
    input_side: int = DETECTOR_SIDE
    num_classes: int = NUM_CLASSES
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 0.0002
    backbone_id: str = "efficientdetv2"
    score_threshold: float = 0.3
    nms_iou_threshold: float = 0.5
    max_detections: int = 20
    pretrained_backbone: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("score_threshold", "nms_iou_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.num_classes != NUM_CLASSES:
            raise ConfigError(f"num_classes is fixed at {NUM_CLASSES}")
        if self.input_side < 16:
            raise ConfigError("input_side must be >= 16")


@dataclass
class ExtractorConfig:
    backend: str = "efficientnet_b7"
    input_side: int = CLASSIFIER_SIDE
    weights_path: Optional[str] = None

    def validate(self) -> None:
        if self.input_side < 16:
            raise ConfigError("extractor input_side must be >= 16")


@dataclass
class SvmConfig:
    C: float = 5.0
    kernel: str = "rbf"
    gamma_policy: str = "scale"
    calibration: str = "monotone_logistic"
    train_on: str = "gt"

    def validate(self) -> None:
        if not self.C > 0:
            raise ConfigError(f"C must be > 0, got {self.C}")
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError(f"unsupported kernel {self.kernel!r}")
        if self.gamma_policy not in ("scale", "auto") and not _is_number(self.gamma_policy):
            raise ConfigError(f"gamma_policy must be 'scale', 'auto' or a number, got {self.gamma_policy!r}")
        if self.calibration != "monotone_logistic":
            raise ConfigError(f"unsupported calibration {self.calibration!r}")
        if self.train_on not in ("gt", "pred"):
            raise ConfigError(f"train_on must be 'gt' or 'pred', got {self.train_on!r}")


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    bins: int = 20
    histogram_source: str = "matched"

    def validate(self) -> None:
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ConfigError("iou_threshold must lie in [0, 1]")
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.histogram_source not in ("matched", "all"):
            raise ConfigError("histogram_source must be 'matched' or 'all'")


@dataclass
class Paths:
    dataset_root: str = "data/images"
    annotations: str = "data/annotations.json"
    output_dir: str = "runs/default"

    @property
    def checkpoints(self) -> Path:
        return Path(self.output_dir) / "checkpoints"

    @property
    def splits(self) -> Path:
        return Path(self.output_dir) / "splits"

    @property
    def logs(self) -> Path:
        return Path(self.output_dir) / "logs"


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    split: SplitSpec = field(default_factory=SplitSpec)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            if hasattr(sub, "validate"):
                sub.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _from_dict(cls, data, "")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        out = copy.deepcopy(self)
        out.seed = out.split.seed = out.synth.seed = int(seed)
        return out

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply ``key.sub=value`` assignments; values parse as JSON when possible."""
        data = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            parts = key.strip().split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(data)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_json() + "\n")


def _is_number(v: Any) -> bool:
    try:
        float(v)
    except (TypeError, ValueError):
        return False
    return True


def _from_dict(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {where or '<root>'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys in {where or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _from_dict(type(default), value, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)
