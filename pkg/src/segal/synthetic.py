"""Synthetic shapes dataset: small RGB images with exact label maps.

Rectangles and ellipses on a dark background, one color family per class,
with per-shape jitter and pixel noise.  The highest class id is deliberately
rare so selection strategies have something to hunt for.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import Dataset, ImageEntry, LabelMap, save_image, save_label_map

_PALETTE = np.array(
    [
        (45, 45, 48),    # background
        (200, 70, 60),
        (70, 190, 80),
        (65, 90, 210),
        (220, 200, 60),
        (180, 70, 200),
        (60, 200, 200),
        (230, 140, 50),
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class ShapesConfig:
    num_train: int = 20
    num_val: int = 5
    size: int = 64
    num_classes: int = 4
    seed: int = 0
    noise_sigma: float = 10.0
    min_shapes: int = 3
    max_shapes: int = 5
    rare_weight: float = 0.25

    def __post_init__(self):
        if not (2 <= self.num_classes <= len(_PALETTE)):
            raise ValueError(f"num_classes must be in [2, {len(_PALETTE)}]")
        if self.size < 16:
            raise ValueError("size must be at least 16")
        if not (0.0 < self.rare_weight <= 1.0):
            raise ValueError("rare_weight must be in (0, 1]")


def make_shapes_image(rng: np.random.Generator, cfg: ShapesConfig):
    """One (image, labels) pair. Shapes draw over each other, last on top."""
    n = cfg.size
    labels = np.zeros((n, n), dtype=np.uint8)
    image = np.tile(_PALETTE[0], (n, n, 1))

    yy, xx = np.mgrid[0:n, 0:n]
    # Highest class id appears rare_weight times as often as the others.
    weights = np.ones(cfg.num_classes - 1)
    weights[-1] = cfg.rare_weight
    weights /= weights.sum()

    for _ in range(rng.integers(cfg.min_shapes, cfg.max_shapes + 1)):
        cls = 1 + rng.choice(cfg.num_classes - 1, p=weights)
        cy, cx = rng.integers(4, n - 4, size=2)
        ry, rx = rng.integers(5, max(6, n // 4), size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        jitter = rng.uniform(-12, 12, size=3)
        labels[mask] = cls
        image[mask] = _PALETTE[cls] + jitter

    image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    return np.clip(image, 0, 255).astype(np.uint8), labels


def generate_shapes(out_dir, cfg: ShapesConfig = ShapesConfig()) -> tuple[Path, Path]:
    """Write images, label maps and manifests; returns (train, val) manifest paths."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    manifests = []
    for split, count in (("train", cfg.num_train), ("val", cfg.num_val)):
        entries = []
        for i in range(count):
            image, labels = make_shapes_image(rng, cfg)
            image_path = out / "images" / f"{split}_{i:03d}.png"
            label_path = out / "labels" / f"{split}_{i:03d}.png"
            save_image(image, image_path)
            lmap = LabelMap(
                width=cfg.size, height=cfg.size, data=labels,
                ignore_id=255, num_classes=cfg.num_classes,
            )
            save_label_map(lmap, label_path)
            entries.append(
                ImageEntry(image_id=i, image_path=image_path, label_path=label_path)
            )
        manifest = out / f"{split}.json"
        _write_manifest(manifest, Dataset(images=tuple(entries), split=split), cfg)
        manifests.append(manifest)
    return manifests[0], manifests[1]


def _write_manifest(path: Path, dataset: Dataset, cfg: ShapesConfig) -> None:
    doc = {
        "split": dataset.split,
        "num_classes": cfg.num_classes,
        "ignore_id": 255,
        "images": [
            {
                "image_id": e.image_id,
                "image": str(Path(e.image_path).relative_to(path.parent)),
                "labels": str(Path(e.label_path).relative_to(path.parent)),
            }
            for e in dataset.images
        ],
    }
    path.write_text(json.dumps(doc, indent=2))


def in_memory_shapes(cfg: ShapesConfig = ShapesConfig()):
    """(train, val) lists of (image, labels) arrays, no files written."""
    rng = np.random.default_rng(cfg.seed)
    train = [make_shapes_image(rng, cfg) for _ in range(cfg.num_train)]
    val = [make_shapes_image(rng, cfg) for _ in range(cfg.num_val)]
    return train, val
