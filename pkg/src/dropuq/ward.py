"""Agglomerative hierarchical clustering with Ward linkage.

Bottom-up merging on Euclidean distance via the nearest-neighbor chain
algorithm (Ward linkage is reducible, so the chain reproduces the greedy
dendrogram in O(n^2)). Merge heights follow the Lance-Williams recurrence
on squared distances; ties break toward the smallest cluster indices, so
the result is fully deterministic.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

__all__ = ["fit_agglomerative", "ward_dendrogram"]


def ward_dendrogram(points: np.ndarray) -> List[Tuple[float, int, int]]:
    """Full Ward merge sequence for an (n, D) point matrix.

    Returns n-1 merges as (height_squared, rep_a, rep_b) where the reps are
    the smallest original point index inside each merged cluster. Heights
    are twice the within-cluster variance increase of the merge.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n == 1:
        return []
    # Squared Euclidean distances; Lance-Williams keeps them equal to
    # 2 * |A||B|/(|A|+|B|) * ||centroid_A - centroid_B||^2 as clusters grow.
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, np.inf)
    d2 = np.maximum(d2, 0.0)
    np.fill_diagonal(d2, np.inf)

    size = np.ones(n)
    rep = np.arange(n)          # smallest original index per active cluster
    active = np.ones(n, dtype=bool)
    merges: List[Tuple[float, int, int]] = []
    chain: List[int] = []

    while len(merges) < n - 1:
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        top = chain[-1]
        row = np.where(active, d2[top], np.inf)
        row[top] = np.inf
        nn = int(np.argmin(row))
        if len(chain) >= 2 and nn == chain[-2]:
            a, b = chain[-2], chain[-1]
            chain = chain[:-2]
            height2 = d2[a, b]
            lo, hi = (a, b) if rep[a] < rep[b] else (b, a)
            merges.append((float(height2), int(rep[lo]), int(rep[hi])))
            # Lance-Williams update written into slot a; slot b retires.
            k = active.copy()
            k[a] = k[b] = False
            sa, sb, sk = size[a], size[b], size[k]
            d2_new = ((sa + sk) * d2[a, k] + (sb + sk) * d2[b, k] - sk * height2) / (
                sa + sb + sk
            )
            d2[a, k] = d2_new
            d2[k, a] = d2_new
            size[a] = sa + sb
            rep[a] = min(rep[a], rep[b])
            active[b] = False
            d2[b, :] = np.inf
            d2[:, b] = np.inf
        else:
            chain.append(nn)
    return merges


def fit_agglomerative(points: np.ndarray, k: int) -> np.ndarray:
    """Cluster an (n, D) matrix into exactly k groups with Ward linkage.

    Labels are dense integers numbered by first occurrence in point order.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"points must be a non-empty 2-D matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("points contain non-finite values")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    merges = ward_dendrogram(X)
    # Ward is monotone, so a stable sort by height keeps children ahead of
    # their parents; applying the first n-k merges yields the k-cluster cut.
    order = sorted(range(len(merges)), key=lambda i: (merges[i][0], i))

    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for idx in order[: n - k]:
        _, a, b = merges[idx]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    labels = np.empty(n, dtype=np.int64)
    seen = {}
    for i in range(n):
        root = find(i)
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    return labels
