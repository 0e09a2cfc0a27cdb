"""Spatial kernels of a PointHop unit.

Farthest point sampling, exact k-nearest-neighbor search, octant
partitioning and per-octant attribute averaging. Every function is a pure
function of its inputs.

Conventions
-----------
* Distances are compared as squared Euclidean distances computed
  coordinate-wise as ``dx*dx + dy*dy + dz*dz``.
* Ties (equal distance) are always broken by ascending point index.
* The octant of an offset ``(dx, dy, dz)`` is
  ``4*[dx >= 0] + 2*[dy >= 0] + [dz >= 0]``; a zero component counts as
  non-negative.
"""

from __future__ import annotations

import numpy as np

NUM_OCTANTS = 8

# upper bound on the number of distance-matrix entries held at once
_KNN_BLOCK = 1 << 22


class GeometryError(ValueError):
    """Raised on out-of-range counts or mismatched shapes."""


def as_points(points) -> np.ndarray:
    """Return ``points`` as a finite float64 array of shape (N, 3)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"expected an (N, 3) array of points, got shape {pts.shape}")
    if len(pts) == 0:
        raise GeometryError("point cloud is empty")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("point coordinates must be finite")
    return pts


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared distances from every row of ``points`` to ``query``.

    ``query`` may be a single point (3,) or a batch (Q, 3), in which case
    the result has shape (Q, N).
    """
    q = query[:, None, :] if query.ndim == 2 else query
    dx = points[..., 0] - q[..., 0]
    dy = points[..., 1] - q[..., 1]
    dz = points[..., 2] - q[..., 2]
    return dx * dx + dy * dy + dz * dz


def farthest_point_sample(points, m: int) -> np.ndarray:
    """Greedy farthest point sampling.

    The first index is the point farthest from the centroid. Each further
    index maximizes the minimum distance to the points already chosen.

    Parameters
    ----------
    points : array_like, shape (N, 3)
    m : int
        Number of points to select, ``1 <= m <= N``.

    Returns
    -------
    np.ndarray of int64, shape (m,)
        Selected indices in selection order.
    """
    pts = as_points(points)
    n = len(pts)
    if not 1 <= m <= n:
        raise GeometryError(f"cannot sample {m} points from a cloud of {n}")

    # sorting first makes the centroid independent of point order
    centroid = np.sort(pts, axis=0).mean(axis=0)
    first = int(np.argmax(squared_distances(pts, centroid)))

    selected = np.empty(m, dtype=np.int64)
    selected[0] = first
    cols = np.ascontiguousarray(pts.T)
    min_dist = squared_distances(pts, pts[first])
    min_dist[first] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        dx = cols[0] - cols[0, nxt]
        dy = cols[1] - cols[1, nxt]
        dz = cols[2] - cols[2, nxt]
        # chosen points hold -1 and stay below any distance
        np.minimum(min_dist, dx * dx + dy * dy + dz * dz, out=min_dist)
        min_dist[nxt] = -1.0
    return selected


def knn_indices(points, queries, k: int) -> np.ndarray:
    """Exact k nearest neighbors of each query among ``points``.

    A query that coincides with a member point finds that point at
    distance zero, so self is included in its own neighborhood.

    Returns
    -------
    np.ndarray of int64, shape (Q, k)
        Neighbor indices per query, sorted by distance then index.
    """
    pts = as_points(points)
    qry = np.asarray(queries, dtype=np.float64)
    if qry.ndim == 1:
        qry = qry[None, :]
    if qry.ndim != 2 or qry.shape[1] != 3:
        raise GeometryError(f"expected (Q, 3) queries, got shape {qry.shape}")
    n = len(pts)
    if not 1 <= k <= n:
        raise GeometryError(f"k={k} out of range for {n} points")

    out = np.empty((len(qry), k), dtype=np.int64)
    step = max(1, _KNN_BLOCK // n)
    for start in range(0, len(qry), step):
        dist = squared_distances(pts, qry[start : start + step])
        out[start : start + step] = _smallest_k(dist, k)
    return out


def _smallest_k(dist: np.ndarray, k: int) -> np.ndarray:
    n = dist.shape[1]
    if k == n:
        return np.argsort(dist, axis=1, kind="stable")
    cand = np.argpartition(dist, k - 1, axis=1)[:, :k]
    cand_dist = np.take_along_axis(dist, cand, axis=1)
    order = np.lexsort((cand, cand_dist), axis=-1)
    result = np.take_along_axis(cand, order, axis=1)

    # argpartition picks arbitrarily among points tied with the k-th distance
    kth = cand_dist.max(axis=1)
    tied = np.flatnonzero((dist <= kth[:, None]).sum(axis=1) > k)
    if len(tied):
        result[tied] = np.argsort(dist[tied], axis=1, kind="stable")[:, :k]
    return result


def knn(points, query, k: int) -> np.ndarray:
    """Neighbor list of a single query point, shape (k,)."""
    return knn_indices(points, np.asarray(query, dtype=np.float64)[None, :], k)[0]


def octant_codes(offsets) -> np.ndarray:
    """Vectorized octant id of offsets with shape (..., 3)."""
    off = np.asarray(offsets, dtype=np.float64)
    nonneg = off >= 0
    return 4 * nonneg[..., 0] + 2 * nonneg[..., 1] + nonneg[..., 2].astype(np.int64)


def octant_of(offset) -> int:
    """Octant id in [0, 7] of a single neighbor-minus-center offset."""
    off = np.asarray(offset, dtype=np.float64)
    if off.shape != (3,) or not np.all(np.isfinite(off)):
        raise GeometryError("offset must be three finite coordinates")
    return int(octant_codes(off))


def octant_stacks(centers, points, neighbors, attributes=None) -> np.ndarray:
    """Per-octant mean attributes for a batch of neighborhoods.

    Parameters
    ----------
    centers : array_like, shape (Q, 3)
        Neighborhood centers.
    points : array_like, shape (N, 3)
        Coordinates the neighbor indices refer to.
    neighbors : array_like of int, shape (Q, k)
        Neighbor indices into ``points``.
    attributes : array_like, shape (N, D), optional
        Attributes of ``points``. When omitted, the attribute of a neighbor
        is its offset from the center (D = 3), which keeps the stack
        translation invariant.

    Returns
    -------
    np.ndarray, shape (Q, 8, D)
        Row ``o`` of each stack is the mean attribute over the neighbors in
        octant ``o``, or zeros for an empty octant.
    """
    ctr = np.asarray(centers, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64)
    nbr = np.asarray(neighbors, dtype=np.int64)
    if nbr.ndim != 2 or len(nbr) != len(ctr):
        raise GeometryError("neighbors must be a (Q, k) index array matching the centers")
    if nbr.size and (nbr.min() < 0 or nbr.max() >= len(pts)):
        raise GeometryError("neighbor index out of range")

    offsets = pts[nbr] - ctr[:, None, :]
    if attributes is None:
        gathered = offsets
    else:
        attr = np.asarray(attributes, dtype=np.float64)
        if attr.ndim != 2 or len(attr) != len(pts):
            raise GeometryError(
                f"attributes must have one row per point: got {attr.shape} for {len(pts)} points"
            )
        gathered = attr[nbr]

    q, k = nbr.shape
    codes = octant_codes(offsets)
    sums = np.zeros((q, NUM_OCTANTS, gathered.shape[-1]))
    counts = np.zeros((q, NUM_OCTANTS))
    rows = np.arange(q)
    # accumulate in neighbor order so each row's sum order is fixed
    for j in range(k):
        sums[rows, codes[:, j]] += gathered[:, j]
        counts[rows, codes[:, j]] += 1.0
    filled = counts > 0
    sums[filled] /= counts[filled][:, None]
    return sums


def quadrant_mean_stack(center, points, neighbors, attributes=None) -> np.ndarray:
    """The (8, D) octant mean stack of one neighborhood."""
    ctr = np.asarray(center, dtype=np.float64).reshape(1, 3)
    nbr = np.asarray(neighbors, dtype=np.int64).reshape(1, -1)
    return octant_stacks(ctr, points, nbr, attributes)[0]
