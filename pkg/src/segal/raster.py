"""Core raster types (label maps, probability maps, segmentations) and file I/O.

All rasters are stored as 2-D numpy arrays of shape (height, width); a flat
pixel index is ``y * width + x``.  Construction validates invariants and the
backing arrays are frozen, so instances can be shared freely across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SEG_MAGIC = b"SEG1"
PPF_MAGIC = b"PPF1"

PROB_SUM_TOL = 1e-5


class RasterError(ValueError):
    """A raster file or in-memory raster violates its contract."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids with an ignore sentinel.

    Every non-ignore value must be < ``num_classes``; ``ignore_id`` marks
    pixels excluded from all downstream sums, counts and metrics.
    """

    width: int
    height: int
    data: np.ndarray
    ignore_id: int
    num_classes: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != (self.height, self.width):
            raise RasterError(
                f"label data shape {data.shape} != (height={self.height}, width={self.width})"
            )
        if self.width <= 0 or self.height <= 0:
            raise RasterError("label map must be non-empty")
        labelled = data[data != self.ignore_id]
        if labelled.size and (int(labelled.max()) >= self.num_classes or int(labelled.min()) < 0):
            raise RasterError(
                f"class id out of range: found {int(labelled.max())} with "
                f"num_classes={self.num_classes} (ignore_id={self.ignore_id})"
            )
        object.__setattr__(self, "data", _freeze(data))

    @property
    def ignore_mask(self) -> np.ndarray:
        """Boolean (h, w) mask, True where the pixel is ignored."""
        return self.data == self.ignore_id


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel class probability distribution, C planes of float32."""

    width: int
    height: int
    num_classes: int
    planes: np.ndarray  # (C, h, w) float32

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float32)
        if planes.shape != (self.num_classes, self.height, self.width):
            raise RasterError(
                f"planes shape {planes.shape} != ({self.num_classes}, {self.height}, {self.width})"
            )
        if self.width <= 0 or self.height <= 0 or self.num_classes <= 0:
            raise RasterError("probability map must be non-empty")
        if planes.size and (float(planes.min()) < 0.0 or float(planes.max()) > 1.0):
            raise RasterError("probabilities must lie in [0, 1]")
        sums = planes.sum(axis=0, dtype=np.float64)
        err = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
        if err > PROB_SUM_TOL:
            raise RasterError(f"per-pixel probability sums off by {err:.2e} (> {PROB_SUM_TOL})")
        object.__setattr__(self, "planes", _freeze(planes))

    def pixel_distributions(self) -> np.ndarray:
        """(h*w, C) float64 view of the per-pixel distributions, row-major."""
        return self.planes.reshape(self.num_classes, -1).T.astype(np.float64)


@dataclass(frozen=True)
class Segmentation:
    """Partition of the raster into regions, with ids dense in 0..R-1."""

    width: int
    height: int
    region_ids: np.ndarray  # (h, w) integer
    num_regions: int

    def __post_init__(self):
        ids = np.asarray(self.region_ids)
        if ids.shape != (self.height, self.width):
            raise RasterError(
                f"region ids shape {ids.shape} != (height={self.height}, width={self.width})"
            )
        if self.width <= 0 or self.height <= 0:
            raise RasterError("segmentation must be non-empty")
        present = np.bincount(ids.ravel(), minlength=self.num_regions)
        if len(present) != self.num_regions or (present == 0).any():
            raise RasterError(
                f"region ids must be dense in 0..{self.num_regions - 1} with every id used"
            )
        object.__setattr__(self, "region_ids", _freeze(ids.astype(np.uint32)))

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.region_ids.ravel(), minlength=self.num_regions)

    def region_pixels(self, region_id: int) -> np.ndarray:
        """Sorted flat pixel indices of one region."""
        return np.flatnonzero(self.region_ids.ravel() == region_id)


@dataclass(frozen=True)
class ImageEntry:
    image_id: int
    image_path: Path
    label_path: Path | None = None  # absent for unannotated (human-mode) data


@dataclass(frozen=True)
class Dataset:
    """A manifest of (image, ground-truth label map) pairs."""

    images: tuple[ImageEntry, ...]
    split: str = "train"

    def __post_init__(self):
        ids = [e.image_id for e in self.images]
        if len(set(ids)) != len(ids):
            raise RasterError("image ids in a dataset must be unique")

    def by_id(self, image_id: int) -> ImageEntry:
        for entry in self.images:
            if entry.image_id == image_id:
                return entry
        raise KeyError(f"no image with id {image_id}")

    @property
    def image_ids(self) -> list[int]:
        return [e.image_id for e in self.images]


def densify_region_ids(ids: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel region ids to 0..R-1 by order of first appearance, row-major."""
    flat = np.asarray(ids).ravel()
    uniq, first = np.unique(flat, return_index=True)
    rank = np.empty(len(uniq), dtype=np.uint32)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq), dtype=np.uint32)
    dense = rank[np.searchsorted(uniq, flat)]
    return dense.reshape(np.asarray(ids).shape), len(uniq)


def segmentation_from_ids(ids: np.ndarray) -> Segmentation:
    """Build a Segmentation from an arbitrary-id array, densifying as needed."""
    ids = np.asarray(ids)
    dense, count = densify_region_ids(ids)
    h, w = dense.shape
    return Segmentation(width=w, height=h, region_ids=dense, num_regions=count)


# ---------------------------------------------------------------------------
# PNG images and label maps
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as a (h, w, 3) uint8 array."""
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise RasterError(f"{path}: expected 8-bit RGB, got mode {img.mode!r}")
        return np.asarray(img, dtype=np.uint8)


def save_image(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise RasterError("expected (h, w, 3) uint8 array")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_label_map(path, num_classes: int, ignore_id: int = 255) -> LabelMap:
    """Load a single-channel 8- or 16-bit PNG as a validated LabelMap."""
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                data = np.asarray(img, dtype=np.int32)
            elif img.mode in ("I", "I;16", "I;16B"):
                data = np.asarray(img, dtype=np.int32)
            else:
                raise RasterError(
                    f"{path}: expected single-channel 8/16-bit PNG, got mode {img.mode!r}"
                )
    except (OSError, SyntaxError) as exc:
        raise RasterError(f"{path}: malformed PNG ({exc})") from exc
    h, w = data.shape
    return LabelMap(width=w, height=h, data=data, ignore_id=ignore_id, num_classes=num_classes)


def save_label_map(label_map: LabelMap, path) -> None:
    data = label_map.data
    hi = max(int(data.max(initial=0)), label_map.ignore_id)
    if hi <= 255:
        Image.fromarray(data.astype(np.uint8)).save(path, format="PNG")
    else:
        Image.fromarray(data.astype(np.uint16)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# SEG1 / PPF1 binary formats
# ---------------------------------------------------------------------------

def save_segmentation(seg: Segmentation, path) -> None:
    """SEG1: magic, u32 width, u32 height, u32 num_regions, u32[w*h] ids (LE)."""
    with open(path, "wb") as fh:
        fh.write(SEG_MAGIC)
        fh.write(struct.pack("<III", seg.width, seg.height, seg.num_regions))
        fh.write(seg.region_ids.astype("<u4").tobytes())


def load_segmentation(path, expected_shape: tuple[int, int] | None = None) -> Segmentation:
    """Load a SEG1 file; sparse ids are re-densified by first appearance."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != SEG_MAGIC:
        raise RasterError(f"{path}: not a SEG1 file")
    w, h, declared = struct.unpack("<III", raw[4:16])
    if w == 0 or h == 0:
        raise RasterError(f"{path}: empty segmentation")
    expected_len = 16 + w * h * 4
    if len(raw) != expected_len:
        raise RasterError(f"{path}: truncated payload ({len(raw)} bytes, need {expected_len})")
    if expected_shape is not None and (w, h) != expected_shape:
        raise RasterError(f"{path}: dimensions {(w, h)} do not match expected {expected_shape}")
    ids = np.frombuffer(raw[16:], dtype="<u4").reshape(h, w)
    distinct = len(np.unique(ids))
    if declared < distinct:
        raise RasterError(f"{path}: header declares {declared} regions but {distinct} ids present")
    dense, count = densify_region_ids(ids)
    return Segmentation(width=w, height=h, region_ids=dense, num_regions=count)


def save_prob_map(pmap: ProbMap, path) -> None:
    """PPF1: magic, u32 width, u32 height, u32 C, C planes of f32[w*h] (LE)."""
    with open(path, "wb") as fh:
        fh.write(PPF_MAGIC)
        fh.write(struct.pack("<III", pmap.width, pmap.height, pmap.num_classes))
        fh.write(pmap.planes.astype("<f4").tobytes())


def load_prob_map(path) -> ProbMap:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != PPF_MAGIC:
        raise RasterError(f"{path}: not a PPF1 file")
    w, h, c = struct.unpack("<III", raw[4:16])
    expected_len = 16 + c * w * h * 4
    if len(raw) != expected_len:
        raise RasterError(f"{path}: truncated payload ({len(raw)} bytes, need {expected_len})")
    planes = np.frombuffer(raw[16:], dtype="<f4").reshape(c, h, w)
    return ProbMap(width=w, height=h, num_classes=c, planes=planes)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

def load_dataset(manifest_path) -> Dataset:
    """Load a JSON dataset manifest; image paths are relative to the manifest."""
    manifest_path = Path(manifest_path)
    try:
        spec = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise RasterError(f"{manifest_path}: invalid JSON ({exc})") from exc
    root = manifest_path.parent
    entries = []
    for item in spec["images"]:
        entries.append(
            ImageEntry(
                image_id=int(item["image_id"]),
                image_path=root / item["image"],
                label_path=root / item["labels"] if item.get("labels") else None,
            )
        )
    return Dataset(images=tuple(entries), split=spec.get("split", "train"))


def save_dataset(dataset: Dataset, manifest_path) -> None:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    spec = {
        "split": dataset.split,
        "images": [
            {
                "image_id": e.image_id,
                "image": str(e.image_path.relative_to(root)),
                "labels": str(e.label_path.relative_to(root)) if e.label_path else None,
            }
            for e in dataset.images
        ],
    }
    manifest_path.write_text(json.dumps(spec, indent=2))
