"""Brute-force reference implementations the tests check the library against.

Everything here trades speed for obviousness: plain Python loops, dicts and
flood fills, no shared code with the package.  Keep it that way -- the value
of these oracles is that they cannot inherit a bug from the code under test.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np


def naive_overlap_counts(a_ids: np.ndarray, b_ids: np.ndarray, ignore=None):
    """Dict (ra, rb) -> pixel count, skipping ignored pixels."""
    counts: dict[tuple[int, int], int] = {}
    h, w = a_ids.shape
    for y in range(h):
        for x in range(w):
            if ignore is not None and ignore[y, x]:
                continue
            key = (int(a_ids[y, x]), int(b_ids[y, x]))
            counts[key] = counts.get(key, 0) + 1
    return counts


def naive_achievable_metrics(a_ids: np.ndarray, b_ids: np.ndarray, ignore=None):
    """ASA/AP/AR/AF in both argument orders, straight from the definitions."""

    def one_direction(x_ids, y_ids):
        counts = naive_overlap_counts(x_ids, y_ids, ignore)
        x_sizes: dict[int, int] = {}
        y_sizes: dict[int, int] = {}
        for (rx, ry), c in counts.items():
            x_sizes[rx] = x_sizes.get(rx, 0) + c
            y_sizes[ry] = y_sizes.get(ry, 0) + c
        best: dict[int, tuple[int, int]] = {}  # rx -> (overlap, ry)
        for (rx, ry), c in sorted(counts.items()):
            cur = best.get(rx)
            if cur is None or c > cur[0]:
                best[rx] = (c, ry)
        total = sum(x_sizes.values())
        asa = sum(c for c, _ in best.values()) / total
        precisions, recalls, f1s = [], [], []
        for rx, (c, ry) in sorted(best.items()):
            p = c / x_sizes[rx]
            r = c / y_sizes[ry]
            precisions.append(p)
            recalls.append(r)
            f1s.append(2 * c / (x_sizes[rx] + y_sizes[ry]))
        n = len(best)
        return {
            "asa": asa,
            "ap": sum(precisions) / n,
            "ar": sum(recalls) / n,
            "af": sum(f1s) / n,
        }

    sg = one_direction(a_ids, b_ids)
    gs = one_direction(b_ids, a_ids)
    out = {f"{k}_sg": v for k, v in sg.items()}
    out.update({f"{k}_gs": v for k, v in gs.items()})
    return out


def flood_fill_components(labels: np.ndarray) -> np.ndarray:
    """4-connected same-value components, numbered in first-visit order."""
    h, w = labels.shape
    out = np.full((h, w), -1, dtype=np.int64)
    nxt = 0
    for sy in range(h):
        for sx in range(w):
            if out[sy, sx] >= 0:
                continue
            value = labels[sy, sx]
            queue = deque([(sy, sx)])
            out[sy, sx] = nxt
            while queue:
                y, x = queue.popleft()
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and out[ny, nx] < 0:
                        if labels[ny, nx] == value:
                            out[ny, nx] = nxt
                            queue.append((ny, nx))
            nxt += 1
    return out


def naive_adjacency(ids: np.ndarray) -> set[tuple[int, int]]:
    """All 4-neighbor region pairs, as sorted tuples of distinct ids."""
    h, w = ids.shape
    pairs: set[tuple[int, int]] = set()
    for y in range(h):
        for x in range(w):
            a = int(ids[y, x])
            for ny, nx in ((y + 1, x), (y, x + 1)):
                if ny < h and nx < w:
                    b = int(ids[ny, nx])
                    if a != b:
                        pairs.add((min(a, b), max(a, b)))
    return pairs


def naive_js_distance(p, q) -> float:
    """sqrt(JS divergence) with natural log, via explicit per-entry terms."""
    total = 0.0
    for pi, qi in zip(p, q):
        mi = (pi + qi) / 2.0
        if pi > 0:
            total += 0.5 * pi * math.log(pi / mi)
        if qi > 0:
            total += 0.5 * qi * math.log(qi / mi)
    return math.sqrt(max(total, 0.0))


def naive_miou(pred: np.ndarray, gt: np.ndarray, ignore_id: int) -> float:
    """Mean IoU over classes present in gt, ignore pixels dropped."""
    classes = sorted({int(v) for v in gt.ravel() if v != ignore_id})
    ious = []
    for c in classes:
        inter = union = 0
        for pv, gv in zip(pred.ravel(), gt.ravel()):
            if gv == ignore_id:
                continue
            p_is = int(pv) == c
            g_is = int(gv) == c
            inter += p_is and g_is
            union += p_is or g_is
        ious.append(inter / union)
    return sum(ious) / len(ious)


def naive_kneedle(values) -> int | None:
    """Max distance above the diagonal after min-max normalization."""
    v = [float(x) for x in values]
    lo, hi = v[0], v[-1]
    if hi - lo < 1e-12:
        return None
    best_idx, best_diff = None, 0.0
    n = len(v)
    for i, y in enumerate(v):
        diff = (y - lo) / (hi - lo) - i / (n - 1)
        if diff > best_diff:
            best_idx, best_diff = i, diff
    return best_idx


def naive_pearson(xs, ys) -> float:
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / math.sqrt(vx * vy)


def random_partition_ids(rng: np.random.Generator, h: int, w: int, k: int) -> np.ndarray:
    """Voronoi partition of the grid around k random sites (raw, undensified).

    Ties go to the lowest site index.  A test-input generator, not an oracle.
    """
    sites = np.stack(
        [rng.integers(0, h, size=k), rng.integers(0, w, size=k)], axis=1
    ).astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    return np.argmin(d2, axis=2)
