"""Acquisition scoring: which merged regions are worth an annotator click.

Score couples per-region uncertainty with a penalty on classes the current
model already predicts everywhere, so rare-class regions float to the top
even at similar uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .merge import RegionStats, batch_uncertainty
from .raster import Segmentation


@dataclass(frozen=True)
class ClassPopularity:
    """Fraction of all pixels sitting in regions of each predicted dominant class."""

    values: np.ndarray  # (C,) float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("popularity must be a non-empty vector")
        if (v < 0).any() or (v > 1).any():
            raise ValueError("popularity values must lie in [0, 1]")
        if abs(float(v.sum()) - 1.0) > 1e-9:
            raise ValueError("popularity values must sum to 1")
        object.__setattr__(self, "values", v)

    def of(self, class_id: int) -> float:
        return float(self.values[class_id])


@dataclass(frozen=True)
class Candidate:
    image_id: int
    region_id: int
    stats: RegionStats
    score: float


def pixel_uncertainty(dist: np.ndarray) -> float:
    """Ratio of the second-highest to the highest class probability."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 1 or dist.size < 2:
        raise ValueError("uncertainty needs a distribution over at least 2 classes")
    return float(batch_uncertainty(dist[None, :])[0])


def class_popularity(
    stats_per_image: Iterable[Sequence[RegionStats]], num_classes: int
) -> ClassPopularity:
    """Pixel-weighted share of each class among predicted region dominants."""
    totals = np.zeros(num_classes, dtype=np.float64)
    for stats in stats_per_image:
        for s in stats:
            totals[s.predicted_dominant] += s.pixel_count
    grand = totals.sum()
    if grand == 0:
        raise ValueError("popularity needs at least one region")
    return ClassPopularity(values=totals / grand)


def acquisition_score(stats: RegionStats, popularity: ClassPopularity) -> float:
    """uncertainty * exp(-popularity of the region's predicted dominant class)."""
    return stats.uncertainty * math.exp(-popularity.of(stats.predicted_dominant))


def score_candidates(
    stats_per_image: Mapping[int, Sequence[RegionStats]], popularity: ClassPopularity
) -> list[Candidate]:
    out = []
    for image_id in sorted(stats_per_image):
        for s in stats_per_image[image_id]:
            out.append(
                Candidate(
                    image_id=image_id,
                    region_id=s.region_id,
                    stats=s,
                    score=acquisition_score(s, popularity),
                )
            )
    return out


def eligible_region_mask(seg: Segmentation, excluded_pixels: np.ndarray) -> np.ndarray:
    """True for regions containing no excluded pixel.

    `excluded_pixels` is a flat or (h, w) boolean mask over the image.
    """
    mask = np.asarray(excluded_pixels, dtype=bool).ravel()
    if mask.size != seg.width * seg.height:
        raise ValueError("excluded mask size does not match segmentation")
    hits = np.bincount(seg.region_ids.ravel()[mask], minlength=seg.num_regions)
    return hits == 0


def rank_candidates(candidates: Iterable[Candidate]) -> list[Candidate]:
    """Descending score; ties by ascending image id, then ascending region id."""
    return sorted(candidates, key=lambda c: (-c.score, c.image_id, c.region_id))


def select_batch(
    candidates: Iterable[Candidate],
    budget: int,
    excluded_pixels: Mapping[int, np.ndarray] | None = None,
    segmentations: Mapping[int, Segmentation] | None = None,
) -> list[Candidate]:
    """Top-scoring eligible candidates, at most `budget` of them.

    A candidate is ineligible when any of its region's pixels are excluded
    (already annotated).  Raises if the budget is not positive or nothing is
    eligible.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    pool = list(candidates)
    if excluded_pixels:
        if segmentations is None:
            raise ValueError("segmentations required to apply pixel exclusions")
        keep_mask: dict[int, np.ndarray] = {}
        for image_id, excl in excluded_pixels.items():
            keep_mask[image_id] = eligible_region_mask(segmentations[image_id], excl)
        pool = [
            c
            for c in pool
            if c.image_id not in keep_mask or keep_mask[c.image_id][c.region_id]
        ]
    if not pool:
        raise ValueError("no eligible candidates to select from")
    return rank_candidates(pool)[:budget]
