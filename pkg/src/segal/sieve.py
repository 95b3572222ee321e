"""Dominant-label sieving: keep only pixels the model confidently agrees on.

Each queried region gets a single class label from the oracle.  Low-confidence
pixels for that class (often boundary pixels or minority intrusions) would
poison training, so we drop everything below a knee point found on the sorted
confidence curve.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .raster import ProbMap, RasterError

SVD_MAGIC = b"SVD1"

# Sentinel: no knee was usable, the whole region was kept.
KEEP_ALL = None


@dataclass(frozen=True)
class SieveConfig:
    sample_count: int = 20
    min_pixels_for_knee: int = 5

    def __post_init__(self):
        if self.sample_count < 3:
            raise ValueError("sample_count must be at least 3")
        if self.min_pixels_for_knee < 1:
            raise ValueError("min_pixels_for_knee must be at least 1")


@dataclass(frozen=True)
class SieveResult:
    pixels: np.ndarray        # flat indices the region had
    kept_pixels: np.ndarray   # subset that survived
    threshold: float | None   # KEEP_ALL (None) when no knee applied


def kneedle(values: np.ndarray) -> int | None:
    """Index of the knee of an ascending curve, or None when there is none.

    Both axes are min-max normalized; the knee is the point of maximum
    difference between the normalized curve and the diagonal.  A flat curve
    (range below 1e-12) or a curve never rising above the diagonal has no
    knee.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 3:
        raise ValueError("knee detection needs at least 3 values")
    if (np.diff(v) < 0).any():
        raise ValueError("values must be sorted ascending")
    span = float(v[-1] - v[0])
    if span < 1e-12:
        return None
    x = np.arange(v.size, dtype=np.float64) / (v.size - 1)
    y = (v - v[0]) / span
    diff = y - x
    idx = int(np.argmax(diff))
    if diff[idx] <= 0:
        return None
    return idx


def sieve_superpixel(
    pixel_indices: np.ndarray,
    dominant: int,
    probs: ProbMap,
    cfg: SieveConfig = SieveConfig(),
) -> SieveResult:
    """Filter a labelled region down to pixels confidently predicted as `dominant`.

    Confidences for the dominant class are sorted ascending, subsampled to
    `cfg.sample_count` evenly spaced points, and cut at the knee.  Regions
    smaller than `cfg.min_pixels_for_knee`, or curves without a knee, are
    kept whole.  The kept set is never empty: the top-confidence pixel always
    satisfies conf >= threshold.
    """
    pixels = np.asarray(pixel_indices, dtype=np.int64)
    if pixels.size == 0:
        raise ValueError("cannot sieve an empty region")
    if not (0 <= dominant < probs.num_classes):
        raise ValueError(f"dominant class {dominant} out of range")
    conf = probs.planes[dominant].ravel()[pixels].astype(np.float64)

    if pixels.size < cfg.min_pixels_for_knee:
        return SieveResult(pixels=pixels, kept_pixels=pixels, threshold=KEEP_ALL)

    sorted_conf = np.sort(conf)
    n = sorted_conf.size
    m = cfg.sample_count
    sub_idx = (np.arange(m, dtype=np.int64) * (n - 1)) // (m - 1)
    curve = sorted_conf[sub_idx]
    knee = kneedle(curve)
    if knee is None:
        return SieveResult(pixels=pixels, kept_pixels=pixels, threshold=KEEP_ALL)
    threshold = float(curve[knee])
    kept = pixels[conf >= threshold]
    return SieveResult(pixels=pixels, kept_pixels=kept, threshold=threshold)


@dataclass(frozen=True)
class SievedDataset:
    """Flat (image, pixel, class) training records, unique per pixel."""

    image_ids: np.ndarray    # (N,) uint32
    pixel_indices: np.ndarray  # (N,) uint32, flat row-major within each image
    class_ids: np.ndarray    # (N,) uint16
    num_classes: int

    def __post_init__(self):
        n = len(self.image_ids)
        if len(self.pixel_indices) != n or len(self.class_ids) != n:
            raise ValueError("record arrays must have equal length")
        if n and int(self.class_ids.max()) >= self.num_classes:
            raise ValueError("class id out of range")
        keys = self.image_ids.astype(np.int64) * (2**32) + self.pixel_indices
        if np.unique(keys).size != n:
            raise ValueError("duplicate (image, pixel) record")

    def __len__(self) -> int:
        return len(self.image_ids)


def build_sieved_dataset(
    queries: Iterable,
    probs_by_image: Mapping[int, ProbMap],
    cfg: SieveConfig = SieveConfig(),
    *,
    num_classes: int,
    apply_sieve: bool = True,
) -> SievedDataset:
    """Sieve every answered query against the current model's predictions.

    `queries` need `image_id`, `pixels` (flat indices) and `answer`
    attributes; entries with no answer are skipped.  Every query is re-sieved
    each round, so pixels rejected by an older model can return.
    """
    images: list[int] = []
    pixels: list[np.ndarray] = []
    classes: list[int] = []
    for q in queries:
        answer = getattr(q, "answer", None)
        if answer is None:
            continue
        if apply_sieve:
            if q.image_id not in probs_by_image:
                raise KeyError(f"no probability map for image {q.image_id}")
            kept = sieve_superpixel(q.pixels, answer, probs_by_image[q.image_id], cfg).kept_pixels
        else:
            kept = np.asarray(q.pixels, dtype=np.int64)
        images.append(q.image_id)
        pixels.append(kept)
        classes.append(int(answer))
    if not pixels:
        return SievedDataset(
            image_ids=np.zeros(0, np.uint32),
            pixel_indices=np.zeros(0, np.uint32),
            class_ids=np.zeros(0, np.uint16),
            num_classes=num_classes,
        )
    image_col = np.concatenate(
        [np.full(len(p), img, dtype=np.uint32) for img, p in zip(images, pixels)]
    )
    pixel_col = np.concatenate(pixels).astype(np.uint32)
    class_col = np.concatenate(
        [np.full(len(p), c, dtype=np.uint16) for c, p in zip(classes, pixels)]
    )
    order = np.lexsort((pixel_col, image_col))
    return SievedDataset(
        image_ids=image_col[order],
        pixel_indices=pixel_col[order],
        class_ids=class_col[order],
        num_classes=num_classes,
    )


_SVD_RECORD = np.dtype([("image_id", "<u4"), ("pixel_index", "<u4"), ("class_id", "<u2")])


def save_sieved(dataset: SievedDataset, path) -> None:
    records = np.empty(len(dataset), dtype=_SVD_RECORD)
    records["image_id"] = dataset.image_ids
    records["pixel_index"] = dataset.pixel_indices
    records["class_id"] = dataset.class_ids
    with open(path, "wb") as fh:
        fh.write(SVD_MAGIC)
        fh.write(struct.pack("<I", len(dataset)))
        fh.write(records.tobytes())


def load_sieved(path, num_classes: int) -> SievedDataset:
    """Class count is not part of the format; callers supply it from config."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SVD_MAGIC:
        raise RasterError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise RasterError(f"{path}: truncated header")
    (count,) = struct.unpack_from("<I", blob, 4)
    body = blob[8:]
    expected = count * _SVD_RECORD.itemsize
    if len(body) != expected:
        raise RasterError(f"{path}: expected {expected} record bytes, found {len(body)}")
    records = np.frombuffer(body, dtype=_SVD_RECORD)
    return SievedDataset(
        image_ids=records["image_id"].copy(),
        pixel_indices=records["pixel_index"].copy(),
        class_ids=records["class_id"].copy(),
        num_classes=num_classes,
    )
