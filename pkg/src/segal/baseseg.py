"""Base over-segmentation: built-in SLIC, regular grids, connectivity repair.

The merge stage unites whole base regions, so all that matters here is a
deterministic, reasonably semantic-aligned over-segmentation.  SLIC is plain
k-means in color+position space with seeds on a regular grid and a fixed
iteration count; no randomness anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_cc

from .raster import Segmentation, segmentation_from_ids

# 4-connectivity everywhere (adjacency, components). Switch to 8 here if ever needed.
CONNECTIVITY = 4


def neighbor_shifts() -> tuple[tuple[int, int], ...]:
    """Forward (dy, dx) offsets defining pixel adjacency."""
    if CONNECTIVITY == 4:
        return ((0, 1), (1, 0))
    return ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass(frozen=True)
class SlicConfig:
    target_region_size: int
    compactness: float = 10.0
    iterations: int = 5

    def __post_init__(self):
        if self.target_region_size < 1:
            raise ValueError("target_region_size must be >= 1")
        if self.compactness <= 0:
            raise ValueError("compactness must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def grid_segmentation(width: int, height: int, cell: int) -> Segmentation:
    """Axis-aligned tiling with partial tiles at the right/bottom borders."""
    if cell < 1:
        raise ValueError("cell must be >= 1")
    ncols = -(-width // cell)
    ys, xs = np.mgrid[0:height, 0:width]
    ids = (ys // cell) * ncols + xs // cell
    return segmentation_from_ids(ids)


def component_labels(ids: np.ndarray) -> np.ndarray:
    """Label maximal same-value connected components, first-appearance order."""
    ids = np.asarray(ids)
    h, w = ids.shape
    n = h * w
    index = np.arange(n).reshape(h, w)
    rows, cols = [], []
    for dy, dx in neighbor_shifts():
        a = ids[: h - dy if dy else h, max(0, -dx): w - dx if dx > 0 else w]
        b = ids[dy:, max(0, dx): w + dx if dx < 0 else w]
        ia = index[: h - dy if dy else h, max(0, -dx): w - dx if dx > 0 else w]
        ib = index[dy:, max(0, dx): w + dx if dx < 0 else w]
        same = a == b
        rows.append(ia[same].ravel())
        cols.append(ib[same].ravel())
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, labels = _csgraph_cc(graph, directed=False)
    return labels.reshape(h, w)


def enforce_connectivity(seg: Segmentation) -> Segmentation:
    """Split every region into its maximal 4-connected components.

    The pixel partition is unchanged as a set of pixels; disconnected parts
    simply become new regions. Idempotent.
    """
    return segmentation_from_ids(component_labels(seg.region_ids))


def _absorb_small_regions(ids: np.ndarray, min_size: int) -> np.ndarray:
    """Merge regions below min_size into the neighbor sharing the most boundary."""
    ids = ids.copy()
    h, w = ids.shape
    while True:
        sizes = np.bincount(ids.ravel())
        small = np.flatnonzero(sizes < min_size)
        small = small[sizes[small] > 0]
        if len(small) == 0 or np.count_nonzero(sizes) <= 1:
            return ids
        # smallest first, ties by lowest id
        target = small[np.lexsort((small, sizes[small]))][0]
        neighbor_counts = np.zeros(len(sizes), dtype=np.int64)
        for dy, dx in ((0, 1), (1, 0)):
            a = ids[: h - dy, : w - dx] if (dy or dx) else ids
            b = ids[dy:, dx:]
            for u, v in ((a, b), (b, a)):
                sel = (u == target) & (v != target)
                if sel.any():
                    neighbor_counts += np.bincount(v[sel].ravel(), minlength=len(sizes))
        if neighbor_counts.max() == 0:
            return ids  # isolated (single-region image)
        ids[ids == target] = int(np.argmax(neighbor_counts))


def slic(image: np.ndarray, cfg: SlicConfig) -> Segmentation:
    """SLIC superpixels: localized k-means over (r, g, b, y, x) features.

    Seeds sit at the centers of a near-square grid of cells, which makes the
    output on a uniform-color image exactly that grid. Output regions are
    4-connected; fragments below a quarter of the target size are absorbed
    into the adjacent region with the longest shared boundary.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (h, w, 3) RGB raster")
    h, w = img.shape[:2]
    area = h * w
    if cfg.target_region_size > area:
        raise ValueError(f"target_region_size {cfg.target_region_size} exceeds image area {area}")

    step = math.sqrt(cfg.target_region_size)
    nx = max(1, round(w / step))
    ny = max(1, round(h / step))
    k = nx * ny
    s_norm = math.sqrt(area / k)
    ratio = (cfg.compactness / s_norm) ** 2

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # initial assignment: the seed grid's own tessellation
    cell_col = np.minimum((np.arange(w) * nx) // w, nx - 1)
    cell_row = np.minimum((np.arange(h) * ny) // h, ny - 1)
    labels = (cell_row[:, None] * nx + cell_col[None, :]).astype(np.int64)

    centers_y = np.empty(k)
    centers_x = np.empty(k)
    centers_rgb = np.empty((k, 3))

    def update_centers():
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=k).astype(np.float64)
        occupied = counts > 0
        counts[~occupied] = 1.0
        centers_y[occupied] = (np.bincount(flat, weights=ys.ravel(), minlength=k) / counts)[occupied]
        centers_x[occupied] = (np.bincount(flat, weights=xs.ravel(), minlength=k) / counts)[occupied]
        for c in range(3):
            ch = np.bincount(flat, weights=img[:, :, c].ravel(), minlength=k) / counts
            centers_rgb[occupied, c] = ch[occupied]

    update_centers()
    reach = int(math.ceil(2 * s_norm))
    for _ in range(cfg.iterations):
        dist = np.full((h, w), np.inf)
        new_labels = labels.copy()
        for ck in range(k):
            cy, cx = centers_y[ck], centers_x[ck]
            y0, y1 = max(0, int(cy) - reach), min(h, int(cy) + reach + 1)
            x0, x1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            d_color = ((img[y0:y1, x0:x1] - centers_rgb[ck]) ** 2).sum(axis=2)
            d_space = (ys[y0:y1, x0:x1] - cy) ** 2 + (xs[y0:y1, x0:x1] - cx) ** 2
            d = d_color + d_space * ratio
            window = dist[y0:y1, x0:x1]
            better = d < window
            window[better] = d[better]
            new_labels[y0:y1, x0:x1][better] = ck
        labels = new_labels
        update_centers()

    comp = component_labels(labels)
    comp = _absorb_small_regions(comp, max(1, cfg.target_region_size // 4))
    return segmentation_from_ids(comp)
