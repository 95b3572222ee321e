"""Simulated annotator backed by ground-truth label maps.

Ground truth also defines the "oracle superpixels" used for upper-bound
experiments: maximal 4-connected components of constant label, the finest
segmentation a region-level annotator could ever label without error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baseseg import component_labels
from .raster import LabelMap, Segmentation, segmentation_from_ids


class UnanswerableQueryError(Exception):
    """Raised when a query covers nothing but ignore pixels."""


@dataclass(frozen=True)
class OracleAnswer:
    dominant: int
    noise_rate: float  # fraction of non-ignore pixels disagreeing with the answer


def oracle_superpixels(gt: LabelMap) -> Segmentation:
    """Maximal 4-connected constant-label components of the ground truth.

    Ignore areas form components too; use `ignore_region_ids` to flag them.
    """
    return segmentation_from_ids(component_labels(gt.data))


def ignore_region_ids(seg: Segmentation, gt: LabelMap) -> frozenset[int]:
    """Region ids of `seg` whose pixels all carry the ignore label."""
    flat_ids = seg.region_ids.ravel()
    ignored = gt.ignore_mask.ravel()
    non_ignore_counts = np.bincount(flat_ids[~ignored], minlength=seg.num_regions)
    return frozenset(int(r) for r in np.nonzero(non_ignore_counts == 0)[0])


def answer_query(pixel_indices: np.ndarray, gt: LabelMap) -> OracleAnswer:
    """Modal ground-truth label of the queried pixels, ignore excluded.

    Ties break toward the lowest class id.  A query of only ignore pixels
    raises UnanswerableQueryError (a human would skip it).
    """
    pixels = np.asarray(pixel_indices, dtype=np.int64)
    if pixels.size == 0:
        raise ValueError("empty query")
    labels = gt.data.ravel()[pixels]
    valid = labels[labels != gt.ignore_id]
    if valid.size == 0:
        raise UnanswerableQueryError("query covers only ignore pixels")
    counts = np.bincount(valid.astype(np.int64))
    dominant = int(np.argmax(counts))
    noise = 1.0 - counts[dominant] / valid.size
    return OracleAnswer(dominant=dominant, noise_rate=float(noise))
