"""Segmentation-quality metrics and small statistics helpers.

The achievable-accuracy family asks: if an annotator labelled every region of
segmentation S with its best-matching region of G, how good could the result
be?  All four variants are computed from one region-overlap table and are
available in both argument orders, which matter: they are not symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import LabelMap, Segmentation


@dataclass(frozen=True)
class OverlapTable:
    """Pixel-overlap counts between two segmentations of the same image.

    counts[s, g] is the number of (non-ignored) pixels in region s of A and
    region g of B.  Rows/columns with zero pixels happen when a region is
    fully ignored.
    """

    counts: np.ndarray  # (Ra, Rb) int64
    a_sizes: np.ndarray  # (Ra,) int64, non-ignored pixels per region of A
    b_sizes: np.ndarray  # (Rb,) int64

    def best_match(self) -> np.ndarray:
        """For each region of A, the id of its max-overlap region in B (ties: lowest id)."""
        return np.argmax(self.counts, axis=1)

    def best_overlap(self) -> np.ndarray:
        return np.max(self.counts, axis=1)

    def transpose(self) -> "OverlapTable":
        return OverlapTable(counts=self.counts.T, a_sizes=self.b_sizes, b_sizes=self.a_sizes)


def overlap_table(
    a: Segmentation, b: Segmentation, ignore_mask: np.ndarray | None = None
) -> OverlapTable:
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("segmentations cover different dimensions")
    fa = a.region_ids.ravel().astype(np.int64)
    fb = b.region_ids.ravel().astype(np.int64)
    if ignore_mask is not None:
        keep = ~np.asarray(ignore_mask, dtype=bool).ravel()
        if keep.size != fa.size:
            raise ValueError("ignore mask size does not match segmentations")
        fa = fa[keep]
        fb = fb[keep]
    counts = np.bincount(
        fa * b.num_regions + fb, minlength=a.num_regions * b.num_regions
    ).reshape(a.num_regions, b.num_regions)
    return OverlapTable(
        counts=counts,
        a_sizes=counts.sum(axis=1),
        b_sizes=counts.sum(axis=0),
    )


def _nonempty(table: OverlapTable) -> np.ndarray:
    mask = table.a_sizes > 0
    if not mask.any():
        raise ValueError("all pixels ignored; metric undefined")
    return mask


def asa(s: Segmentation, g: Segmentation, ignore_mask: np.ndarray | None = None) -> float:
    """Achievable segmentation accuracy: pixel-weighted best-overlap fraction."""
    table = overlap_table(s, g, ignore_mask)
    _nonempty(table)
    return float(table.best_overlap().sum() / table.a_sizes.sum())


def achievable_precision(
    s: Segmentation, g: Segmentation, ignore_mask: np.ndarray | None = None
) -> float:
    """Unweighted mean over regions of best-overlap / region size."""
    table = overlap_table(s, g, ignore_mask)
    mask = _nonempty(table)
    return float(np.mean(table.best_overlap()[mask] / table.a_sizes[mask]))


def achievable_recall(
    s: Segmentation, g: Segmentation, ignore_mask: np.ndarray | None = None
) -> float:
    """Mean over regions of best-overlap / best-match-region size."""
    table = overlap_table(s, g, ignore_mask)
    mask = _nonempty(table)
    match_sizes = table.b_sizes[table.best_match()[mask]]
    return float(np.mean(table.best_overlap()[mask] / match_sizes))


def achievable_f1(
    s: Segmentation, g: Segmentation, ignore_mask: np.ndarray | None = None
) -> float:
    """Mean over regions of the harmonic mean of achievable precision and recall."""
    table = overlap_table(s, g, ignore_mask)
    mask = _nonempty(table)
    best = table.best_overlap()[mask]
    own = table.a_sizes[mask]
    match_sizes = table.b_sizes[table.best_match()[mask]]
    return float(np.mean(2.0 * best / (own + match_sizes)))


def achievable_metrics(
    s: Segmentation, g: Segmentation, ignore_mask: np.ndarray | None = None
) -> dict[str, float]:
    """All four achievable metrics in both argument orders."""
    out = {}
    for prefix, (x, y) in (("sg", (s, g)), ("gs", (g, s))):
        out[f"asa_{prefix}"] = asa(x, y, ignore_mask)
        out[f"ap_{prefix}"] = achievable_precision(x, y, ignore_mask)
        out[f"ar_{prefix}"] = achievable_recall(x, y, ignore_mask)
        out[f"af_{prefix}"] = achievable_f1(x, y, ignore_mask)
    return out


def miou(pred: LabelMap, gt: LabelMap) -> float:
    """Mean intersection-over-union across classes present in the ground truth.

    Pixels flagged ignore in the ground truth are excluded entirely.
    """
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError("prediction and ground truth dimensions differ")
    keep = ~gt.ignore_mask.ravel()
    if not keep.any():
        raise ValueError("ground truth is fully ignored")
    p = pred.data.ravel()[keep].astype(np.int64)
    t = gt.data.ravel()[keep].astype(np.int64)
    ious = []
    for c in np.unique(t):
        pc = p == c
        tc = t == c
        inter = np.count_nonzero(pc & tc)
        union = np.count_nonzero(pc | tc)
        ious.append(inter / union)
    return float(np.mean(ious))


def dataset_achievable_metrics(triples) -> dict[str, float]:
    """All eight achievable metrics aggregated over (S, G, ignore_mask) triples.

    ASA pools pixel counts globally; AP/AR/AF average over the union of all
    regions across images, consistent with their per-image definitions.
    """
    asa_num = {"sg": 0.0, "gs": 0.0}
    asa_den = {"sg": 0.0, "gs": 0.0}
    sums = {f"{m}_{d}": 0.0 for m in ("ap", "ar", "af") for d in ("sg", "gs")}
    counts = {"sg": 0, "gs": 0}
    for s, g, ignore_mask in triples:
        table = overlap_table(s, g, ignore_mask)
        for direction in ("sg", "gs"):
            t = table if direction == "sg" else table.transpose()
            mask = t.a_sizes > 0
            best = t.best_overlap()[mask]
            own = t.a_sizes[mask]
            match_sizes = t.b_sizes[t.best_match()[mask]]
            asa_num[direction] += float(best.sum())
            asa_den[direction] += float(own.sum())
            sums[f"ap_{direction}"] += float((best / own).sum())
            sums[f"ar_{direction}"] += float((best / match_sizes).sum())
            sums[f"af_{direction}"] += float((2.0 * best / (own + match_sizes)).sum())
            counts[direction] += int(mask.sum())
    if counts["sg"] == 0:
        raise ValueError("no assessable regions in any image")
    out = {}
    for direction in ("sg", "gs"):
        out[f"asa_{direction}"] = asa_num[direction] / asa_den[direction]
        for m in ("ap", "ar", "af"):
            out[f"{m}_{direction}"] = sums[f"{m}_{direction}"] / counts[direction]
    return out


def dataset_miou(pairs) -> float:
    """mIoU pooled over (prediction, ground truth) LabelMap pairs.

    A full confusion matrix accumulates across images before the per-class
    ratio, the usual convention for dataset-level reporting; classes never
    appearing in any ground truth are left out of the mean.
    """
    confusion = None
    num_classes = 0
    for pred, gt in pairs:
        if (pred.width, pred.height) != (gt.width, gt.height):
            raise ValueError("prediction and ground truth dimensions differ")
        if confusion is None:
            num_classes = gt.num_classes
            confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
        keep = ~gt.ignore_mask.ravel()
        p = pred.data.ravel()[keep].astype(np.int64)
        t = gt.data.ravel()[keep].astype(np.int64)
        confusion += np.bincount(
            t * num_classes + p, minlength=num_classes * num_classes
        ).reshape(num_classes, num_classes)
    if confusion is None or confusion.sum() == 0:
        raise ValueError("no assessable pixels in any image")
    present = confusion.sum(axis=1) > 0
    inter = np.diag(confusion)
    union = confusion.sum(axis=1) + confusion.sum(axis=0) - inter
    return float(np.mean(inter[present] / union[present]))


def region_dominant_labels(seg: Segmentation, gt: LabelMap) -> np.ndarray:
    """Modal non-ignore ground-truth label per region; -1 for all-ignore regions."""
    flat_ids = seg.region_ids.ravel()
    labels = gt.data.ravel()
    keep = labels != gt.ignore_id
    c = gt.num_classes
    counts = np.bincount(
        flat_ids[keep] * c + labels[keep].astype(np.int64), minlength=seg.num_regions * c
    ).reshape(seg.num_regions, c)
    dominant = np.argmax(counts, axis=1)
    dominant[counts.sum(axis=1) == 0] = -1
    return dominant


def merge_correctness(
    events: list[tuple[int, int]], seg: Segmentation, gt: LabelMap
) -> float:
    """Fraction of merge events uniting regions of equal dominant ground truth.

    Events touching an all-ignore region do not count either way.  Raises
    when no event is assessable.
    """
    if not events:
        raise ValueError("no merge events to assess")
    dominant = region_dominant_labels(seg, gt)
    good = 0
    total = 0
    for root, absorbed in events:
        dr, da = int(dominant[root]), int(dominant[absorbed])
        if dr < 0 or da < 0:
            continue
        total += 1
        good += dr == da
    if total == 0:
        raise ValueError("all merge events touch only ignored regions")
    return good / total


def euclidean_distance_criterion(p: np.ndarray, q: np.ndarray) -> float:
    """Plain Euclidean distance between distributions, the ablation baseline."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return float(np.sqrt(np.sum((p - q) ** 2)))


def pearson_correlation(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d and the same length")
    if x.size < 2:
        raise ValueError("correlation needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(np.sum(dx * dx)))
    sy = math.sqrt(float(np.sum(dy * dy)))
    if sx == 0 or sy == 0:
        raise ValueError("correlation undefined for zero-variance input")
    return float(np.sum(dx * dy)) / (sx * sy)
