"""Synthetic stand-in for the microscopy dataset.

Each of the 11 categories is a parameterized ellipse with its own size,
aspect ratio, colors and interior texture, drawn on a flat background with
optional Gaussian noise. Ground-truth boxes are the tight bounds of the
rendered egg mask, so they are exact at pixel level.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .boxes import BoundingBox
from .categories import NUM_CLASSES
from .config import SynthConfig
from .data import AnnotatedImage, Annotation, write_coco
from .errors import ConfigError


@dataclass(frozen=True)
class EggStyle:
    semi_axis: float  # major semi-axis as a fraction of the image side
    aspect: float  # minor / major
    shell: tuple[int, int, int]
    fill: tuple[int, int, int]
    texture: str
    shell_width: float = 0.15


STYLES: tuple[EggStyle, ...] = (
    EggStyle(0.16, 0.82, (120, 80, 30), (170, 130, 60), "mammillated", 0.25),
    EggStyle(0.12, 0.50, (150, 120, 50), (200, 180, 110), "plugs"),
    EggStyle(0.14, 0.45, (110, 110, 100), (225, 225, 205), "asymmetric", 0.10),
    EggStyle(0.20, 0.60, (140, 110, 40), (205, 175, 90), "plain"),
    EggStyle(0.13, 0.55, (90, 90, 90), (220, 225, 220), "cells", 0.08),
    EggStyle(0.14, 0.92, (160, 140, 60), (215, 200, 140), "plain", 0.35),
    EggStyle(0.10, 0.85, (120, 130, 120), (230, 235, 225), "oncosphere", 0.10),
    EggStyle(0.07, 0.55, (90, 60, 30), (140, 100, 50), "operculum"),
    EggStyle(0.18, 0.58, (150, 100, 20), (190, 140, 50), "operculum"),
    EggStyle(0.09, 1.00, (70, 45, 25), (120, 85, 50), "striated", 0.30),
    EggStyle(0.12, 0.45, (130, 80, 30), (170, 110, 50), "plugs", 0.20),
)
assert len(STYLES) == NUM_CLASSES

BACKGROUND = np.array([205.0, 195.0, 175.0])


def read_synth_config(path: str | Path) -> SynthConfig:
    """Parse a ``key = value`` text file (``#`` comments, ``:`` also accepted)."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split(sep, 1))
        if key in ("image_size", "per_class_count", "seed"):
            values[key] = int(value)
        elif key == "noise_sigma":
            values[key] = float(value)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    cfg = SynthConfig(**values)
    cfg.validate()
    return cfg


def write_synth_config(cfg: SynthConfig, path: str | Path) -> None:
    text = "".join(f"{k} = {getattr(cfg, k)}\n" for k in ("image_size", "per_class_count", "noise_sigma", "seed"))
    Path(path).write_text(text)


def render_egg(size: int, category: int, rng: np.random.Generator, noise_sigma: float):
    """Draw one egg of ``category``; returns (uint8 image, tight box)."""
    style = STYLES[category]
    a = style.semi_axis * size * rng.uniform(0.9, 1.1)
    b = a * style.aspect
    theta = rng.uniform(0.0, np.pi)
    ext_x = np.sqrt((a * np.cos(theta)) ** 2 + (b * np.sin(theta)) ** 2)
    ext_y = np.sqrt((a * np.sin(theta)) ** 2 + (b * np.cos(theta)) ** 2)
    cx = rng.uniform(ext_x + 2, size - ext_x - 2)
    cy = rng.uniform(ext_y + 2, size - ext_y - 2)
    jitter = rng.uniform(-8, 8, size=3)
    background = BACKGROUND + rng.uniform(-10, 10, size=3)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = xs - cx, ys - cy
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / a
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / b
    if style.texture == "asymmetric":
        v = np.where(v > 0, v * 1.35, v)
    r = np.hypot(u, v)
    phi = np.arctan2(v, u)
    inside = r <= 1.0

    shell_inner = 1.0 - style.shell_width
    if style.texture == "mammillated":
        shell_inner = 1.0 - style.shell_width * (0.6 + 0.4 * np.sin(14 * phi))
    shell = inside & (r > shell_inner)
    if style.texture == "striated":
        shell &= np.sin(22 * phi) > -0.2

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = background
    img[inside] = np.asarray(style.fill) + jitter
    img[shell] = np.asarray(style.shell) + jitter

    accent = np.zeros_like(inside)
    accent_color = np.asarray(style.shell, dtype=np.float64)
    if style.texture == "plugs":
        accent = inside & (np.abs(u) > 0.82) & (np.abs(v) < 0.4)
        accent_color = np.array([245.0, 235.0, 190.0])
    elif style.texture == "cells":
        for pu, pv in ((-0.35, -0.25), (-0.35, 0.25), (0.3, -0.25), (0.3, 0.25)):
            accent |= np.hypot((u - pu) / 0.25, (v - pv) / 0.35) <= 1.0
        accent_color = np.array([135.0, 135.0, 120.0])
    elif style.texture == "oncosphere":
        accent = (r < 0.5) & (r > 0.38)
        accent_color = np.array([95.0, 100.0, 90.0])
    elif style.texture == "operculum":
        accent = inside & (u > 0.7) & (u < 0.8)
        accent_color = np.asarray(style.shell) * 0.6
    img[accent & inside] = accent_color + jitter

    if noise_sigma > 0:
        img += rng.normal(0.0, noise_sigma, size=img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    cols = np.flatnonzero(inside.any(axis=0))
    rows = np.flatnonzero(inside.any(axis=1))
    box = BoundingBox(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
    return pixels, box


def synth_generate(config: SynthConfig, seed: int | None = None) -> list[AnnotatedImage]:
    """``per_class_count`` single-egg images per category, ordered by category.

    Every image draws from its own generator keyed on (seed, category,
    index), so a given image does not depend on the total count.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    out = []
    for cat in range(NUM_CLASSES):
        for i in range(config.per_class_count):
            rng = np.random.default_rng([int(seed), cat, i])
            pixels, box = render_egg(config.image_size, cat, rng, config.noise_sigma)
            out.append(
                AnnotatedImage(
                    image_id=f"synth_c{cat:02d}_{i:04d}.png",
                    annotations=(Annotation(box, cat),),
                    array=pixels,
                    width=config.image_size,
                    height=config.image_size,
                )
            )
    return out


def write_dataset(dataset: Sequence[AnnotatedImage], root: str | Path, annotation_path: str | Path) -> None:
    """Save images as PNG under ``root`` and their annotations as COCO JSON."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for img in dataset:
        Image.fromarray(img.pixels).save(root / img.image_id)
    write_coco(dataset, annotation_path)
