"""Region adjacency graph and adaptive merging of prediction-similar regions.

Regions of a base segmentation are united when their averaged class
predictions are close in Jensen-Shannon distance.  Growth always compares a
candidate against the *root's* distribution, held fixed, so every pair inside
a merged region is within twice the threshold and the absorbed set does not
depend on the exploration order.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .baseseg import neighbor_shifts
from .raster import ProbMap, Segmentation, segmentation_from_ids

JS_DISTANCE_MAX = math.sqrt(math.log(2.0))


@dataclass(frozen=True)
class RegionGraph:
    """Symmetric adjacency lists over region ids, no self-loops."""

    num_regions: int
    adjacency: tuple[tuple[int, ...], ...]

    def neighbors(self, region_id: int) -> tuple[int, ...]:
        return self.adjacency[region_id]


@dataclass(frozen=True)
class RegionStats:
    region_id: int
    pixel_count: int
    mean_prob: np.ndarray  # (C,) float64, sums to 1
    uncertainty: float     # mean best-vs-second-best ratio, in [0, 1]
    predicted_dominant: int


@dataclass(frozen=True)
class MergeConfig:
    epsilon: float
    merge_fraction: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not (0.0 < self.merge_fraction <= 1.0):
            raise ValueError("merge_fraction must be in (0, 1]")


@dataclass(frozen=True)
class MergeResult:
    segmentation: Segmentation
    events: tuple[tuple[int, int], ...]  # (root, absorbed) pairs, pre-merge ids
    root_of: np.ndarray                  # pre-merge region id -> its group root


def build_region_graph(seg: Segmentation) -> RegionGraph:
    """Edge (s, n) iff some pixel of s is 4-adjacent to some pixel of n."""
    ids = seg.region_ids
    h, w = ids.shape
    pairs = []
    for dy, dx in neighbor_shifts():
        a = ids[: h - dy if dy else h, max(0, -dx): w - dx if dx > 0 else w]
        b = ids[dy:, max(0, dx): w + dx if dx < 0 else w]
        diff = a != b
        if diff.any():
            pairs.append(np.stack([a[diff].ravel(), b[diff].ravel()], axis=1))
    adjacency: list[tuple[int, ...]] = []
    if pairs:
        edges = np.concatenate(pairs)
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        neighbor_sets: list[list[int]] = [[] for _ in range(seg.num_regions)]
        for s, n in edges:
            neighbor_sets[int(s)].append(int(n))
            neighbor_sets[int(n)].append(int(s))
        adjacency = [tuple(sorted(ns)) for ns in neighbor_sets]
    else:
        adjacency = [() for _ in range(seg.num_regions)]
    return RegionGraph(num_regions=seg.num_regions, adjacency=tuple(adjacency))


def js_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Square root of the Jensen-Shannon divergence, natural logarithm.

    A true metric on distributions, bounded by sqrt(ln 2). Zero-probability
    entries follow 0*log 0 := 0; the mixture (p+q)/2 is nonzero wherever
    either argument is, so the value is always finite.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    ps = p > 0
    qs = q > 0
    kl_pm = float(np.sum(p[ps] * np.log(p[ps] / m[ps])))
    kl_qm = float(np.sum(q[qs] * np.log(q[qs] / m[qs])))
    return math.sqrt(max(0.0, 0.5 * (kl_pm + kl_qm)))


def batch_uncertainty(dists: np.ndarray) -> np.ndarray:
    """Best-vs-second-best ratio u = second_max / max per row of (N, C)."""
    if dists.shape[1] < 2:
        raise ValueError("uncertainty needs at least 2 classes")
    part = np.partition(dists, -2, axis=1)
    top = part[:, -1]
    second = part[:, -2]
    return np.where(top > 0, second / np.maximum(top, 1e-300), 1.0)


def region_stats(seg: Segmentation, probs: ProbMap) -> list[RegionStats]:
    """Per-region mean prediction, mean pixel uncertainty, and dominant class."""
    if (probs.width, probs.height) != (seg.width, seg.height):
        raise ValueError("segmentation and probability map dimensions differ")
    flat_ids = seg.region_ids.ravel()
    dists = probs.pixel_distributions()  # (N, C) float64
    n_regions = seg.num_regions
    c = probs.num_classes

    counts = np.bincount(flat_ids, minlength=n_regions).astype(np.float64)
    if (counts == 0).any():
        raise ValueError("segmentation contains an empty region")
    mean_prob = np.empty((n_regions, c))
    for ci in range(c):
        mean_prob[:, ci] = np.bincount(flat_ids, weights=dists[:, ci], minlength=n_regions)
    mean_prob /= counts[:, None]

    pixel_unc = batch_uncertainty(dists)
    region_unc = np.bincount(flat_ids, weights=pixel_unc, minlength=n_regions) / counts

    argmax = np.argmax(dists, axis=1)
    label_counts = np.bincount(flat_ids * c + argmax, minlength=n_regions * c).reshape(n_regions, c)
    dominant = np.argmax(label_counts, axis=1)  # ties -> lowest class id

    return [
        RegionStats(
            region_id=r,
            pixel_count=int(counts[r]),
            mean_prob=mean_prob[r],
            uncertainty=float(region_unc[r]),
            predicted_dominant=int(dominant[r]),
        )
        for r in range(n_regions)
    ]


def merge_regions(
    seg: Segmentation,
    probs: ProbMap,
    cfg: MergeConfig,
    *,
    distance=js_distance,
    traversal: str = "bfs",
    stats: list[RegionStats] | None = None,
) -> MergeResult:
    """Grow merged regions from roots in descending-uncertainty order.

    Only the top ceil(merge_fraction * R) regions by uncertainty act as roots;
    regions never reached pass through unmerged.  A neighbor is absorbed only
    while still unexplored and within `cfg.epsilon` of the root's mean
    prediction (strict inequality), the root distribution never updating.
    """
    if traversal not in ("bfs", "dfs"):
        raise ValueError("traversal must be 'bfs' or 'dfs'")
    if stats is None:
        stats = region_stats(seg, probs)
    graph = build_region_graph(seg)
    n = seg.num_regions

    uncertainty = np.array([s.uncertainty for s in stats])
    order = np.lexsort((np.arange(n), -uncertainty))  # desc uncertainty, ties asc id
    n_roots = math.ceil(cfg.merge_fraction * n)

    explored = np.zeros(n, dtype=bool)
    root_of = np.arange(n)
    events: list[tuple[int, int]] = []
    mean_probs = [s.mean_prob for s in stats]

    for root in order[:n_roots]:
        root = int(root)
        if explored[root]:
            continue
        explored[root] = True
        f_root = mean_probs[root]
        frontier: deque[int] = deque([root])
        while frontier:
            node = frontier.popleft() if traversal == "bfs" else frontier.pop()
            for nb in graph.neighbors(node):
                if explored[nb]:
                    continue
                if distance(f_root, mean_probs[nb]) < cfg.epsilon:
                    explored[nb] = True
                    root_of[nb] = root
                    events.append((root, nb))
                    frontier.append(nb)

    merged_ids = root_of[seg.region_ids]
    return MergeResult(
        segmentation=segmentation_from_ids(merged_ids),
        events=tuple(events),
        root_of=root_of,
    )


def adaptive_merge(
    seg: Segmentation,
    probs: ProbMap,
    cfg: MergeConfig,
    *,
    distance=js_distance,
    traversal: str = "bfs",
) -> Segmentation:
    """Merge base superpixels into prediction-coherent regions; see merge_regions."""
    return merge_regions(seg, probs, cfg, distance=distance, traversal=traversal).segmentation
