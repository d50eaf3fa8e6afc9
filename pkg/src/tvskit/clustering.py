"""Adaptive cosine-similarity clustering for keyframe selection.

The cluster count is not fixed: each iteration reassigns rows to their
most similar center, recomputes centers as raw member means, then merges
undersized clusters, splits internally dissimilar ones, and fuses center
pairs that grew too similar. Bounds k_min <= k <= k_max are honored except
for the documented undersized-cluster merge, which may undershoot k_min
with a recorded warning rather than keep a degenerate cluster alive.

Centers are raw (unnormalized) means; L2 normalization is applied only
when computing similarities. After the loop a final assignment pass runs
so that returned labels are a fixed point of nearest-center assignment.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .errors import ValidationError

TVSE_MAGIC = b"TVSE"
TVSE_VERSION = 1

_DEAD = -1e30  # similarity assigned to zero-norm centers so they empty out


@dataclass(frozen=True)
class IsodataParams:
    """Knobs for the adaptive clustering loop."""

    k_init: int = 4
    max_iters: int = 20
    theta_split: float = 0.85
    theta_merge: float = 0.98
    k_max: int = 8
    k_min: int = 1
    delta_max: float = 1e-4
    n_min: int = 1
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (1 <= self.k_min <= self.k_init <= self.k_max):
            raise ValidationError(
                f"need 1 <= k_min <= k_init <= k_max, got "
                f"{self.k_min}/{self.k_init}/{self.k_max}"
            )
        if self.n_min < 1:
            raise ValidationError(f"n_min must be >= 1, got {self.n_min}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.delta_max < 0:
            raise ValidationError(f"delta_max must be >= 0, got {self.delta_max}")

    def validate_for(self, n_rows: int) -> None:
        if self.k_init > n_rows:
            raise ValidationError(f"k_init {self.k_init} exceeds row count {n_rows}")
        if self.k_max > n_rows:
            raise ValidationError(f"k_max {self.k_max} exceeds row count {n_rows}")


@dataclass
class Clustering:
    assignments: np.ndarray  # shape (n,), int cluster ids 0..k-1
    centers: np.ndarray      # shape (k, d), raw means
    iterations_run: int
    warnings: list[str] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return int(self.centers.shape[0])


def validate_embeddings(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"embedding matrix must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n < 1 or d < 1:
        raise ValidationError(f"embedding matrix must be at least 1x1, got {n}x{d}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("embedding matrix contains non-finite values")
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValidationError(f"zero embedding rows are not allowed (rows {zero.tolist()})")
    return x


def _unit(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return a / safe


def _similarities(x_unit: np.ndarray, centers: np.ndarray) -> np.ndarray:
    sims = x_unit @ _unit(centers).T
    dead = np.linalg.norm(centers, axis=1) < 1e-12
    if dead.any():
        sims[:, dead] = _DEAD
    return sims


def _compact(assignments: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Remap ids after dropping clusters; ``keep`` is the sorted id list kept."""
    size = int(max(assignments.max(), keep.max())) + 2
    remap = -np.ones(size, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return remap[assignments]


def isodata_cluster(
    x: np.ndarray | Sequence[Sequence[float]],
    p: IsodataParams,
    init_rows: Sequence[int] | None = None,
) -> Clustering:
    """Run the split/merge clustering loop on an (n, d) embedding matrix.

    ``init_rows`` overrides the seeded random draw of initial centers,
    which keeps the run comparable when the row order changes.
    """
    x = validate_embeddings(np.asarray(x))
    n, _ = x.shape
    p.validate_for(n)
    x_unit = _unit(x)

    if init_rows is not None:
        if len(init_rows) != p.k_init or len(set(init_rows)) != p.k_init:
            raise ValidationError(f"init_rows must hold {p.k_init} distinct row indices")
        centers = x[list(init_rows)].astype(np.float64).copy()
    else:
        rng = np.random.default_rng(p.rng_seed)
        centers = x[rng.choice(n, size=p.k_init, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    warnings: list[str] = []
    iterations = 0

    while iterations < p.max_iters:
        old_centers = centers.copy()
        structural = False

        # assign rows to the most similar center (ties go to the lowest id)
        assign = np.argmax(_similarities(x_unit, centers), axis=1)

        # recompute centers as raw member means, dropping emptied clusters
        k = centers.shape[0]
        sizes = np.bincount(assign, minlength=k)
        if (sizes == 0).any():
            keep = np.flatnonzero(sizes > 0)
            centers = centers[keep]
            assign = _compact(assign, keep)
            sizes = sizes[keep]
            structural = True
            if centers.shape[0] < p.k_min:
                warnings.append(
                    f"dropping empty clusters left k={centers.shape[0]} below k_min={p.k_min}"
                )
        for i in range(centers.shape[0]):
            centers[i] = x[assign == i].mean(axis=0)

        # undersized-cluster enforcement: merge the smallest into its nearest
        # neighbor, once per iteration
        k = centers.shape[0]
        sizes = np.bincount(assign, minlength=k)
        if k > 1 and sizes.min() < p.n_min:
            small = int(np.argmin(sizes))
            sims = (_unit(centers) @ _unit(centers[small : small + 1]).T).ravel()
            sims[small] = -np.inf
            target = int(np.argmax(sims))
            assign[assign == small] = target
            centers[target] = x[assign == target].mean(axis=0)
            keep = np.flatnonzero(np.arange(k) != small)
            centers = centers[keep]
            assign = _compact(assign, keep)
            structural = True
            if centers.shape[0] < p.k_min:
                warnings.append(
                    f"undersized-cluster merge left k={centers.shape[0]} "
                    f"below k_min={p.k_min}"
                )

        # split clusters whose members sit too far from their center
        k_before_split = centers.shape[0]
        for i in range(k_before_split):
            if centers.shape[0] >= p.k_max:
                break
            members = np.flatnonzero(assign == i)
            if members.size < 2:
                continue
            member_sims = x_unit[members] @ _unit(centers[i : i + 1]).T.ravel()
            if member_sims.mean() >= p.theta_split:
                continue
            far1 = members[int(np.argmin(member_sims))]
            sims_to_far1 = x_unit[members] @ x_unit[far1]
            far2 = members[int(np.argmin(sims_to_far1))]
            # the new centers are the two seed members themselves; the next
            # update phase turns them back into means
            new_id = centers.shape[0]
            centers[i] = x[far1]
            centers = np.vstack([centers, x[far2][None, :]])
            # move members closer to the second seed; ties stay with the first
            to_new = members[
                (x_unit[members] @ x_unit[far2]) > (x_unit[members] @ x_unit[far1])
            ]
            assign[to_new] = new_id
            structural = True

        # fuse the most similar center pair while above the merge threshold;
        # one pair at a time so stale centers cannot cascade
        while centers.shape[0] > p.k_min:
            k = centers.shape[0]
            sims = _unit(centers) @ _unit(centers).T
            iu = np.triu_indices(k, k=1)
            if iu[0].size == 0:
                break
            flat = sims[iu]
            best = int(np.argmax(flat))
            if flat[best] <= p.theta_merge:
                break
            i, j = int(iu[0][best]), int(iu[1][best])
            assign[assign == j] = i
            centers[i] = x[assign == i].mean(axis=0)
            keep = np.flatnonzero(np.arange(k) != j)
            centers = centers[keep]
            assign = _compact(assign, keep)
            structural = True

        iterations += 1
        if not structural and centers.shape == old_centers.shape:
            shift = np.linalg.norm(centers - old_centers, axis=1).max()
            if shift < p.delta_max:
                break

    # final pass: labels must be a fixed point of nearest-center assignment
    while True:
        assign = np.argmax(_similarities(x_unit, centers), axis=1)
        sizes = np.bincount(assign, minlength=centers.shape[0])
        if (sizes > 0).all():
            break
        keep = np.flatnonzero(sizes > 0)
        centers = centers[keep]
        assign = _compact(assign, keep)
        if centers.shape[0] < p.k_min:
            warnings.append(
                f"final reassignment left k={centers.shape[0]} below k_min={p.k_min}"
            )

    return Clustering(
        assignments=assign,
        centers=centers,
        iterations_run=iterations,
        warnings=warnings,
    )


def select_keyframes(
    x: np.ndarray,
    timestamps: Sequence[float],
    p: IsodataParams,
) -> list[tuple[float, int]]:
    """Pick one representative (timestamp, row) per cluster.

    The representative is the member most similar to its cluster center;
    similarity ties resolve to the earliest timestamp. Output is sorted by
    timestamp.
    """
    x = validate_embeddings(np.asarray(x))
    if len(timestamps) != x.shape[0]:
        raise ValidationError(
            f"got {len(timestamps)} timestamps for {x.shape[0]} embedding rows"
        )
    ts = [float(t) for t in timestamps]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValidationError("timestamps must be strictly increasing")

    result = isodata_cluster(x, p)
    x_unit = _unit(x)
    picks: list[tuple[float, int]] = []
    for i in range(result.n_clusters):
        members = np.flatnonzero(result.assignments == i)
        sims = x_unit[members] @ _unit(result.centers[i : i + 1]).T.ravel()
        # argmax returns the first maximum: lowest row index = earliest timestamp
        row = int(members[int(np.argmax(sims))])
        picks.append((ts[row], row))
    picks.sort()
    return picks


class IsodataClustering(BaseEstimator, ClusterMixin):
    """Estimator wrapper so the clusterer composes with sklearn pipelines.

    Parameters mirror IsodataParams. After fit:

    labels_ : (n,) cluster ids
    cluster_centers_ : (k, d) raw-mean centers
    n_iter_ : iterations executed
    """

    def __init__(
        self,
        k_init: int = 4,
        max_iters: int = 20,
        theta_split: float = 0.85,
        theta_merge: float = 0.98,
        k_max: int = 8,
        k_min: int = 1,
        delta_max: float = 1e-4,
        n_min: int = 1,
        rng_seed: int = 0,
    ):
        self.k_init = k_init
        self.max_iters = max_iters
        self.theta_split = theta_split
        self.theta_merge = theta_merge
        self.k_max = k_max
        self.k_min = k_min
        self.delta_max = delta_max
        self.n_min = n_min
        self.rng_seed = rng_seed

    def _params(self) -> IsodataParams:
        return IsodataParams(
            k_init=self.k_init,
            max_iters=self.max_iters,
            theta_split=self.theta_split,
            theta_merge=self.theta_merge,
            k_max=self.k_max,
            k_min=self.k_min,
            delta_max=self.delta_max,
            n_min=self.n_min,
            rng_seed=self.rng_seed,
        )

    def fit(self, X, y=None):
        result = isodata_cluster(np.asarray(X), self._params())
        self.labels_ = result.assignments
        self.cluster_centers_ = result.centers
        self.n_iter_ = result.iterations_run
        self.warnings_ = list(result.warnings)
        return self

    def predict(self, X):
        if not hasattr(self, "cluster_centers_"):
            raise ValidationError("estimator is not fitted")
        x = validate_embeddings(np.asarray(X))
        return np.argmax(_similarities(_unit(x), self.cluster_centers_), axis=1)


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    """Write the binary embedding file: TVSE magic, version, n, d, float32 rows."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float32))
    if m.ndim != 2:
        raise ValidationError(f"embedding matrix must be 2-D, got shape {m.shape}")
    n, d = m.shape
    with open(path, "wb") as fh:
        fh.write(TVSE_MAGIC)
        fh.write(struct.pack("<III", TVSE_VERSION, n, d))
        fh.write(m.tobytes(order="C"))


def read_embeddings(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != TVSE_MAGIC:
        raise ValidationError(f"{path}: not an embedding file (bad magic)")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != TVSE_VERSION:
        raise ValidationError(f"{path}: unsupported embedding file version {version}")
    expected = 16 + 4 * n * d
    if len(raw) != expected:
        raise ValidationError(
            f"{path}: payload size mismatch, expected {expected} bytes got {len(raw)}"
        )
    return np.frombuffer(raw[16:], dtype="<f4").reshape(n, d).copy()
