"""Small single-scale anchor-free detector for desk-scale runs.

Center-heatmap formulation at stride 8: an objectness heatmap trained with
the penalty-reduced focal loss, plus per-cell class logits, log box size and
center offset supervised on the 3x3 cells around each object center.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..config import DetectorConfig
from ..device import get_device
from .backends import register

STRIDE = 8


def _block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class TinyCenterNet(nn.Module):
    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        w = width
        self.stem = nn.Sequential(_block(3, w, 2), _block(w, 2 * w, 2), _block(2 * w, 2 * w))
        self.down8 = nn.Sequential(_block(2 * w, 4 * w, 2), _block(4 * w, 4 * w))
        self.down16 = nn.Sequential(_block(4 * w, 6 * w, 2), _block(6 * w, 6 * w))
        self.lateral = nn.Conv2d(6 * w, 4 * w, 1)
        self.fuse = _block(4 * w, 4 * w)
        self.head = nn.Sequential(
            nn.Conv2d(4 * w, 4 * w, 3, padding=1), nn.ReLU(inplace=True), nn.Conv2d(4 * w, 1 + num_classes + 4, 1)
        )
        with torch.no_grad():
            self.head[-1].bias[0] = -2.19  # objectness prior 0.1
        self.num_classes = num_classes

    def forward(self, x):
        c8 = self.down8(self.stem(x))
        c16 = self.down16(c8)
        up = F.interpolate(self.lateral(c16), size=c8.shape[-2:], mode="nearest")
        out = self.head(self.fuse(c8 + up))
        k = self.num_classes
        return out[:, :1], out[:, 1 : 1 + k], out[:, 1 + k : 3 + k], out[:, 3 + k : 5 + k]


def _focal(logit, target):
    p = torch.sigmoid(logit).clamp(1e-6, 1 - 1e-6)
    pos = target.eq(1).float()
    neg = 1.0 - pos
    pos_loss = -torch.log(p) * (1 - p) ** 2 * pos
    neg_loss = -torch.log(1 - p) * p**2 * (1 - target) ** 4 * neg
    return (pos_loss.sum() + neg_loss.sum()) / pos.sum().clamp(min=1.0)


class TinyBackend:
    deterministic = True

    def __init__(self, config: DetectorConfig, seed: int):
        if config.input_side % STRIDE:
            raise ValueError(f"tiny backend needs input_side divisible by {STRIDE}")
        self.config = config
        self.grid = config.input_side // STRIDE
        torch.use_deterministic_algorithms(True, warn_only=True)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = TinyCenterNet(config.num_classes)
        self.device = get_device()
        self.net.to(self.device).eval()
        self._opt = None

    # -- targets ----------------------------------------------------------

    def _targets(self, targets):
        g, k = self.grid, self.config.num_classes
        n = len(targets)
        heat = np.zeros((n, 1, g, g), np.float32)
        cls = np.full((n, g, g), -1, np.int64)
        reg = np.zeros((n, 4, g, g), np.float32)
        mask = np.zeros((n, g, g), np.float32)
        ys, xs = np.mgrid[0:g, 0:g] + 0.5
        for b, (boxes, labels) in enumerate(targets):
            # Larger objects are written last so they win shared cells.
            for j in np.argsort([(bx[2] - bx[0]) * (bx[3] - bx[1]) for bx in boxes]):
                x0, y0, x1, y1 = boxes[j] / STRIDE
                cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
                sigma = max(0.6, float(np.sqrt(max(x1 - x0, 1e-3) * max(y1 - y0, 1e-3))) / 5)
                gauss = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
                ci, cj = min(int(cy), g - 1), min(int(cx), g - 1)
                heat[b, 0] = np.maximum(heat[b, 0], gauss)
                heat[b, 0, ci, cj] = 1.0
                for i in range(max(ci - 1, 0), min(ci + 2, g)):
                    for jj in range(max(cj - 1, 0), min(cj + 2, g)):
                        cls[b, i, jj] = labels[j]
                        reg[b, :, i, jj] = (
                            np.log(max(x1 - x0, 1e-3)),
                            np.log(max(y1 - y0, 1e-3)),
                            cx - (jj + 0.5),
                            cy - (i + 0.5),
                        )
                        mask[b, i, jj] = 1.0
        return tuple(torch.from_numpy(a) for a in (heat, cls, reg, mask))

    def _loss(self, pixels, targets):
        x = torch.from_numpy(np.ascontiguousarray(pixels.transpose(0, 3, 1, 2))).to(self.device)
        heat_t, cls_t, reg_t, mask = (t.to(self.device) for t in self._targets(targets))
        heat, cls, size, off = self.net(x)
        loss = _focal(heat, heat_t)
        denom = mask.sum().clamp(min=1.0)
        if mask.sum() > 0:
            ce = F.cross_entropy(cls, cls_t, ignore_index=-1, reduction="sum") / denom
            l_size = (F.l1_loss(size, reg_t[:, :2], reduction="none").sum(1) * mask).sum() / denom
            l_off = (F.l1_loss(off, reg_t[:, 2:], reduction="none").sum(1) * mask).sum() / denom
            loss = loss + ce + 0.5 * l_size + l_off
        return loss

    # -- backend protocol ---------------------------------------------------

    def train_step(self, pixels, targets) -> float:
        if self._opt is None:
            self._opt = torch.optim.Adam(self.net.parameters(), lr=self.config.learning_rate)
        self.net.train()
        loss = self._loss(pixels, targets)
        self._opt.zero_grad()
        loss.backward()
        self._opt.step()
        self.net.eval()
        return float(loss.detach())

    @torch.no_grad()
    def eval_loss(self, pixels, targets) -> float:
        self.net.eval()
        return float(self._loss(pixels, targets))

    @torch.no_grad()
    def predict_raw(self, pixels):
        self.net.eval()
        x = torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))[None].to(self.device)
        heat, cls, size, off = self.net(x)
        obj = torch.sigmoid(heat)[0, 0]
        peaks = obj * (F.max_pool2d(obj[None, None], 3, stride=1, padding=1)[0, 0] == obj)
        flat = peaks.flatten()
        k = min(self.config.max_detections, flat.numel())
        gate, idx = torch.topk(flat, k)
        keep = gate >= self.config.score_threshold
        gate, idx = gate[keep], idx[keep]
        i, j = idx // self.grid, idx % self.grid
        wh = torch.exp(size[0][:, i, j]) * STRIDE
        cx = (j + 0.5 + off[0, 0, i, j]) * STRIDE
        cy = (i + 0.5 + off[0, 1, i, j]) * STRIDE
        boxes = torch.stack([cx - wh[0] / 2, cy - wh[1] / 2, cx + wh[0] / 2, cy + wh[1] / 2], dim=1)
        probs = torch.softmax(cls[0][:, i, j].T.double(), dim=1)
        return boxes.double().cpu().numpy(), gate.double().cpu().numpy(), probs.cpu().numpy()

    def state_dict(self):
        return {k: v.cpu() for k, v in self.net.state_dict().items()}

    def load_state_dict(self, state):
        self.net.load_state_dict(state)
        self.net.eval()


@register("tiny")
def _make_tiny(config, seed):
    return TinyBackend(config, seed)
