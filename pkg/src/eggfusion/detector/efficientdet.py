"""EfficientDet with an EfficientNetV2 backbone, via the ``effdet`` package.

The smallest v2 variant (``efficientdetv2_dt``) is used, resized to the
configured input side. Class heads are sigmoid per anchor; the backend
returns each kept anchor's full 11-way sigmoid vector so the detector core
can normalize it into a probability vector.
"""

from __future__ import annotations

import numpy as np

from ..config import DetectorConfig
from ..device import get_device
from ..errors import CapabilityError
from .backends import register

MODEL_NAME = "efficientdetv2_dt"
CANDIDATES = 100


class EfficientDetBackend:
    deterministic = False  # timm/effdet use atomics in some CPU/GPU kernels

    def __init__(self, config: DetectorConfig, seed: int):
        try:
            import torch
            from effdet import DetBenchTrain, create_model_from_config, get_efficientdet_config
            from effdet.anchors import Anchors, decode_box_outputs
        except ImportError as exc:
            raise CapabilityError(
                "the efficientdetv2 backend needs the 'effdet' package (pip install effdet)"
            ) from exc
        self._torch = torch
        self._decode = decode_box_outputs
        self.config = config
        cfg = get_efficientdet_config(MODEL_NAME)
        cfg.image_size = (config.input_side, config.input_side)
        cfg.num_classes = config.num_classes
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            try:
                model = create_model_from_config(
                    cfg, bench_task="", pretrained=False, pretrained_backbone=config.pretrained_backbone
                )
            except Exception as exc:  # download failures surface as assorted errors
                raise CapabilityError(f"could not build {MODEL_NAME}: {exc}") from exc
        self.device = get_device()
        self.model = model.to(self.device).eval()
        self.bench = DetBenchTrain(model).to(self.device)
        self.anchors = Anchors.from_config(model.config).to(self.device)
        self._opt = None

    def _target(self, targets):
        torch = self._torch
        n = max(1, max(len(b) for b, _ in targets))
        bbox = torch.zeros(len(targets), n, 4)
        cls = torch.full((len(targets), n), -1.0)
        for i, (boxes, labels) in enumerate(targets):
            if len(boxes):
                b = torch.as_tensor(boxes, dtype=torch.float32)
                bbox[i, : len(b)] = b[:, [1, 0, 3, 2]]  # effdet wants y0 x0 y1 x1
                cls[i, : len(b)] = torch.as_tensor(labels, dtype=torch.float32) + 1
        return {"bbox": bbox.to(self.device), "cls": cls.to(self.device)}

    def _input(self, pixels):
        return self._torch.from_numpy(np.ascontiguousarray(pixels.transpose(0, 3, 1, 2))).to(self.device)

    def train_step(self, pixels, targets) -> float:
        torch = self._torch
        if self._opt is None:
            self._opt = torch.optim.AdamW(self.model.parameters(), lr=self.config.learning_rate)
        self.bench.train()
        out = self.bench(self._input(pixels), self._target(targets))
        self._opt.zero_grad()
        out["loss"].backward()
        self._opt.step()
        self.bench.eval()
        return float(out["loss"].detach())

    def eval_loss(self, pixels, targets) -> float:
        with self._torch.no_grad():
            self.bench.train()  # train-mode forward returns the loss only
            self.model.eval()
            out = self.bench(self._input(pixels), self._target(targets))
        self.bench.eval()
        return float(out["loss"])

    def predict_raw(self, pixels):
        torch = self._torch
        k = self.config.num_classes
        with torch.no_grad():
            self.model.eval()
            cls_out, box_out = self.model(self._input(pixels[None]))
            logits = torch.cat([c.permute(0, 2, 3, 1).reshape(-1, k) for c in cls_out])
            rel = torch.cat([b.permute(0, 2, 3, 1).reshape(-1, 4) for b in box_out])
            probs = torch.sigmoid(logits.double())
            gate, _ = probs.max(dim=1)
            top = torch.topk(gate, min(CANDIDATES, gate.numel())).indices
            top = top[gate[top] >= self.config.score_threshold]
            boxes = self._decode(rel[top].float(), self.anchors.boxes[top], output_xyxy=True)
        return boxes.double().cpu().numpy(), gate[top].cpu().numpy(), probs[top].cpu().numpy()

    def state_dict(self):
        return {k: v.cpu() for k, v in self.model.state_dict().items()}

    def load_state_dict(self, state):
        self.model.load_state_dict(state)
        self.model.eval()


@register("efficientdetv2")
def _make_effdet(config, seed):
    return EfficientDetBackend(config, seed)
