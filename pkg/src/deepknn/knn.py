"""Exact k-nearest-neighbour queries under the Euclidean metric.

The k-NN set of a query is every indexed point within the k-NN radius, so
distance ties at the radius are all included and a neighbour set may hold
more than ``k`` points.  Two backends are provided: a chunked brute-force scan
and a spatial tree (scipy's ``cKDTree``) used only to shortlist candidates.
Both compute final squared distances with :func:`squared_distances`, so their
answers agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

# scratch budget (float64 entries) for one brute-force chunk
_CHUNK_ENTRIES = 1 << 22


class Backend(str, Enum):
    BRUTE_FORCE = "brute"
    SPATIAL_TREE = "tree"


def squared_distances(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Squared distances between rows of ``points`` (..., n, d) and ``x`` (..., 1, d).

    Coordinates are accumulated one at a time so every code path performs the
    same floating-point operations in the same order.
    """
    d2 = np.zeros(np.broadcast_shapes(points.shape[:-1], x.shape[:-1]))
    for j in range(points.shape[-1]):
        diff = points[..., j] - x[..., j]
        d2 += diff * diff
    return d2


@dataclass(frozen=True)
class KnnQueryResult:
    radius: float
    neighbors: np.ndarray
    scores: np.ndarray
    prediction: int


@dataclass(frozen=True)
class BatchQueryResult:
    radii: np.ndarray
    scores: np.ndarray
    predictions: np.ndarray
    sizes: np.ndarray


class KnnIndex:
    """Immutable snapshot of points and labels answering exact k-NN queries."""

    def __init__(self, points, labels, num_classes: int, backend: Backend | str = Backend.BRUTE_FORCE):
        P = np.array(points, dtype=np.float64)
        if P.ndim == 1:
            P = P[:, None]
        y = np.array(labels, dtype=np.int64)
        if P.ndim != 2 or len(P) == 0:
            raise ValueError("index needs a non-empty 2-D point set")
        if y.shape != (len(P),):
            raise ValueError(f"{len(y)} labels for {len(P)} points")
        if num_classes < 1 or y.min() < 0 or y.max() >= num_classes:
            raise ValueError(f"labels must lie in [0, {num_classes})")
        P.setflags(write=False)
        y.setflags(write=False)
        self.points = P
        self.labels = y
        self.num_classes = int(num_classes)
        self.backend = Backend(backend)
        self._onehot = np.zeros((len(y), self.num_classes))
        self._onehot[np.arange(len(y)), y] = 1.0
        self._tree = cKDTree(P) if self.backend is Backend.SPATIAL_TREE else None

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _check_k(self, k: int, excluded: bool) -> None:
        available = self.n - (1 if excluded else 0)
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        if k > available:
            raise ValueError(f"k={k} exceeds the {available} available points")

    def _as_query(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,):
            raise ValueError(f"query has dimension {x.size}, index has {self.dim}")
        return x

    def _candidates(self, x: np.ndarray, k: int, exclude: int | None) -> tuple[np.ndarray, np.ndarray]:
        """Candidate indices guaranteed to contain the full k-NN set, with
        their exact squared distances (the excluded point set to inf)."""
        if self._tree is None:
            idx = np.arange(self.n)
        else:
            kk = k + (exclude is not None)
            dist, _ = self._tree.query(x, k=kk)
            r = float(np.atleast_1d(dist)[-1])
            # inflate past the tree's own rounding, then refine exactly
            r = r * (1 + 1e-9) + 1e-12
            idx = np.sort(np.asarray(self._tree.query_ball_point(x, r), dtype=np.int64))
        d2 = squared_distances(self.points[idx], x[None, :])
        if exclude is not None:
            d2[idx == exclude] = np.inf
        return idx, d2

    def radius(self, x, k: int, exclude: int | None = None) -> float:
        self._check_k(k, exclude is not None)
        _, d2 = self._candidates(self._as_query(x), k, exclude)
        return float(np.sqrt(np.partition(d2, k - 1)[k - 1]))

    def query(self, x, k: int, exclude: int | None = None) -> KnnQueryResult:
        self._check_k(k, exclude is not None)
        idx, d2 = self._candidates(self._as_query(x), k, exclude)
        kth = np.partition(d2, k - 1)[k - 1]
        neighbors = idx[d2 <= kth]
        counts = np.bincount(self.labels[neighbors], minlength=self.num_classes)
        scores = counts / len(neighbors)
        return KnnQueryResult(float(np.sqrt(kth)), neighbors, scores, int(np.argmax(counts)))

    def query_batch(self, X, k: int, exclude=None) -> BatchQueryResult:
        """Vectorised :meth:`query` over the rows of ``X``.

        ``exclude`` is ``None`` or one index per row (negative for none).
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None] if self.dim == 1 else X[None, :]
        if X.shape[1] != self.dim:
            raise ValueError(f"queries have dimension {X.shape[1]}, index has {self.dim}")
        m = len(X)
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64)
            if exclude.shape != (m,):
                raise ValueError("exclude needs one entry per query")
        self._check_k(k, exclude is not None and bool(np.any(exclude >= 0)))

        radii = np.empty(m)
        counts = np.empty((m, self.num_classes))
        if self._tree is not None:
            self._tree_batch(X, k, exclude, radii, counts)
        else:
            step = max(1, _CHUNK_ENTRIES // max(1, self.n * self.dim))
            for start in range(0, m, step):
                stop = min(m, start + step)
                d2 = squared_distances(self.points[None, :, :], X[start:stop, None, :])
                if exclude is not None:
                    rows = np.nonzero(exclude[start:stop] >= 0)[0]
                    d2[rows, exclude[start:stop][rows]] = np.inf
                kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
                radii[start:stop] = kth
                counts[start:stop] = (d2 <= kth[:, None]).astype(np.float64) @ self._onehot
        sizes = counts.sum(axis=1)
        return BatchQueryResult(
            radii=np.sqrt(radii),
            scores=counts / sizes[:, None],
            predictions=np.argmax(counts, axis=1),
            sizes=sizes.astype(np.int64),
        )

    def _tree_batch(self, X, k, exclude, radii, counts) -> None:
        """Shortlist ``k`` plus a margin of candidates per row with the tree,
        refine with exact distances, and fall back to a ball query on rows
        where points outside the shortlist could still tie the radius."""
        m, K = len(X), self.num_classes
        kk = min(self.n, k + 1 + max(8, k // 4))
        tree_dist, idx = self._tree.query(X, k=kk)
        tree_dist = tree_dist.reshape(m, kk)
        idx = idx.reshape(m, kk)
        d2 = squared_distances(self.points[idx], X[:, None, :])
        if exclude is not None:
            d2[idx == exclude[:, None]] = np.inf
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        if kk < self.n:
            safe = np.sqrt(kth) * (1 + 1e-9) + 1e-12 < tree_dist[:, -1]
        else:
            safe = np.ones(m, dtype=bool)
        inside = d2 <= kth[:, None]
        flat = (np.arange(m)[:, None] * K + self.labels[idx])[inside]
        counts[:] = np.bincount(flat, minlength=m * K).reshape(m, K)
        radii[:] = kth
        for i in np.nonzero(~safe)[0]:
            ex = None if exclude is None or exclude[i] < 0 else int(exclude[i])
            cidx, cd2 = self._candidates(X[i], k, ex)
            ckth = np.partition(cd2, k - 1)[k - 1]
            radii[i] = ckth
            counts[i] = np.bincount(self.labels[cidx[cd2 <= ckth]], minlength=K)


def build_index(points, labels, num_classes: int, backend: Backend | str = Backend.BRUTE_FORCE) -> KnnIndex:
    return KnnIndex(points, labels, num_classes, backend)


def knn_radius(index: KnnIndex, x, k: int) -> float:
    """Distance to the k-th nearest indexed point (the query itself counts if indexed)."""
    return index.radius(x, k)


def knn_query(index: KnnIndex, x, k: int, exclude: int | None = None) -> KnnQueryResult:
    return index.query(x, k, exclude)


def knn_predict(points, labels, num_classes: int, queries, k: int, backend=Backend.BRUTE_FORCE) -> np.ndarray:
    """Majority-vote predictions for many queries against a fresh index."""
    return KnnIndex(points, labels, num_classes, backend).query_batch(queries, k).predictions


def _within_set_radii(points, k: int) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if k < 2 or k > len(P):
        raise ValueError(f"need 2 <= k <= {len(P)} points, got k={k}")
    index = KnnIndex(P, np.zeros(len(P), dtype=np.int64), 1, Backend.SPATIAL_TREE)
    # the point itself is its own first neighbour: rank k overall is rank k-1 among the others
    return index.query_batch(P, k - 1, exclude=np.arange(len(P))).radii


def min_pairwise_distance(points) -> float:
    """Smallest distance between two distinct members of the set."""
    P = np.asarray(points, dtype=np.float64)
    if len(P) < 2:
        raise ValueError("need at least 2 points")
    return float(_within_set_radii(P, 2).min())


def min_knn_spread(points, k: int) -> float:
    """Smallest within-set k-NN radius, ranking each member as its own first
    neighbour so that ``min_knn_spread(C, 2) == min_pairwise_distance(C)``."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if k > len(P) or k < 1:
        raise ValueError(f"k must satisfy 1 <= k <= {len(P)}, got {k}")
    if k == 1:
        return 0.0
    return float(_within_set_radii(P, k).min())
