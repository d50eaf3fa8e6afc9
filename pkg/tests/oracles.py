"""Independent reference implementations the tests check production code against.

Everything here is deliberately written on a different path from the
package: rasterized time grids instead of interval sweeps, plain loops and
enumeration instead of vectorized shortcuts.
"""

from __future__ import annotations

import math

import numpy as np


def rasterize(pairs: list[list[float]], horizon: float, resolution: float = 1e-3) -> np.ndarray:
    """Boolean occupancy grid over [0, horizon] at the given resolution."""
    n = int(math.ceil(horizon / resolution)) + 1
    grid = np.zeros(n, dtype=bool)
    for start, end in pairs:
        lo = int(round(start / resolution))
        hi = int(round(end / resolution))
        grid[lo:hi] = True
    return grid


def raster_scores(
    pred: list[list[float]], gt: list[list[float]], horizon: float, resolution: float = 1e-3
) -> dict[str, float]:
    """Metric quartet measured by counting grid cells."""
    p = rasterize(pred, horizon, resolution)
    g = rasterize(gt, horizon, resolution)
    inter = float(np.count_nonzero(p & g))
    union = float(np.count_nonzero(p | g))
    p_total = float(np.count_nonzero(p))
    g_total = float(np.count_nonzero(g))
    iou = inter / union if union else 0.0
    precision = inter / p_total if p_total else 0.0
    coverage = inter / g_total if g_total else 0.0
    f1 = 2 * precision * coverage / (precision + coverage) if precision + coverage else 0.0
    return {"miou": iou, "precision": precision, "coverage": coverage, "f1": f1}


def reference_spherical_kmeans(
    x: np.ndarray, k: int, seed: int, max_iters: int, delta_max: float
) -> tuple[np.ndarray, np.ndarray, int]:
    """Plain spherical k-means with the same init, stop, and empty-drop rules."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(n, size=k, replace=False)].copy()
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)

    def unit(a):
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        return a / np.where(norms > 0, norms, 1.0)

    t = 0
    labels = np.zeros(n, dtype=np.int64)
    while t < max_iters:
        old = centers.copy()
        labels = np.argmax(xn @ unit(centers).T, axis=1)
        sizes = np.bincount(labels, minlength=centers.shape[0])
        structural = False
        if (sizes == 0).any():
            keep = np.flatnonzero(sizes > 0)
            centers = centers[keep]
            remap = -np.ones(int(max(labels.max(), keep.max())) + 2, dtype=np.int64)
            remap[keep] = np.arange(len(keep))
            labels = remap[labels]
            structural = True
        for i in range(centers.shape[0]):
            centers[i] = x[labels == i].mean(axis=0)
        t += 1
        if not structural and centers.shape == old.shape:
            if np.linalg.norm(centers - old, axis=1).max() < delta_max:
                break
    while True:
        labels = np.argmax(xn @ unit(centers).T, axis=1)
        sizes = np.bincount(labels, minlength=centers.shape[0])
        if (sizes > 0).all():
            break
        centers = centers[np.flatnonzero(sizes > 0)]
    return labels, centers, t


# ---------------------------------------------------------------------------
# brute-force versions of the 11 plan tools


def bf_get_duration(meta) -> float:
    return float(meta.duration)


def bf_get_resolution(meta):
    return tuple(meta.resolution)


def bf_get_total_frame_num(meta) -> int:
    return int(meta.total_frames)


def bf_intersect(a: list[int], b: list[int]) -> list[int]:
    return sorted({i for i in a if i in set(b)})


def bf_union(a: list[int], b: list[int]) -> list[int]:
    return sorted(set(a).union(b))


def bf_concat_and_fill(a: list[int], b: list[int]) -> list[int]:
    merged = sorted(set(a) | set(b))
    if not merged:
        return []
    out = []
    value = merged[0]
    while value <= merged[-1]:
        out.append(value)
        value += 1
    return out


def bf_concat(a: list[int], b: list[int]) -> list[int]:
    return [*a, *b]


def bf_timestamp_to_single_index(meta, t: float) -> int:
    # enumerate: the index whose span [i/r, (i+1)/r) holds the timestamp
    r = meta.frame_rate
    if t < 0:
        return 0
    for i in range(meta.total_frames):
        if i / r <= t < (i + 1) / r:
            return i
    return meta.total_frames - 1


def bf_single_timestamp_to_index_range(meta, t: float) -> list[int]:
    center = bf_timestamp_to_single_index(meta, t)
    return [i for i in range(meta.total_frames) if center - 30 <= i <= center + 29]


def bf_range_timestamp_to_index_range(meta, start: float, end: float) -> list[int]:
    lo = math.floor(start * meta.frame_rate)
    hi = math.floor(end * meta.frame_rate)
    return [i for i in range(meta.total_frames) if lo <= i <= hi]


def bf_indices_to_segments(indices: list[int], frame_rate: float) -> list[list[float]]:
    """Run splitting by explicit membership scan."""
    if not indices:
        return []
    members = set(indices)
    out = []
    start = None
    for i in range(min(members), max(members) + 2):
        if i in members and start is None:
            start = i
        elif i not in members and start is not None:
            out.append([start / frame_rate, i / frame_rate])
            start = None
    return out
