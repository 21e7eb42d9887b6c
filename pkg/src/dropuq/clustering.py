"""Grouping sampled detections into instance clusters.

The pipeline turns the N x M detections of one image into instance clusters:
box features -> component-count heuristic -> mixture fit (or Ward linkage)
-> hard labels -> cluster assembly -> oversized-cluster split rule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .bgm import ClusteringError, MixtureState, assign_labels, fit_bgm
from .model import Detection, SampleSet
from .ward import fit_agglomerative

__all__ = [
    "ClusterConfig",
    "InstanceCluster",
    "ClusteringError",
    "MixtureState",
    "assign_labels",
    "fit_bgm",
    "fit_agglomerative",
    "estimate_component_count",
    "box_features",
    "build_instance_clusters",
    "labels_from_clusters",
    "split_oversized",
    "cluster_pipeline",
]

_MAX_SPLIT_DEPTH = 3  # recursion cap for the oversized-cluster split rule


@dataclass(frozen=True)
class ClusterConfig:
    algorithm: str = "bgm"                 # "bgm" or "agg"
    max_iters: int = 500
    elbo_tol: float = 1e-4
    weight_concentration_prior: Optional[float] = None  # None -> 1/K_max
    split_threshold: int = 150             # re-cluster groups larger than this
    seed: int = 0
    n_init: int = 3

    def __post_init__(self):
        if self.algorithm not in ("bgm", "agg"):
            raise ValueError(f"algorithm must be 'bgm' or 'agg', got {self.algorithm!r}")
        if self.split_threshold < 1:
            raise ValueError(f"split_threshold must be >= 1, got {self.split_threshold}")
        if self.elbo_tol <= 0:
            raise ValueError(f"elbo_tol must be positive, got {self.elbo_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.n_init < 1:
            raise ValueError(f"n_init must be >= 1, got {self.n_init}")


@dataclass(frozen=True)
class InstanceCluster:
    """Detections judged to belong to one physical instance."""

    cluster_id: int
    members: Tuple[Detection, ...]
    source_labels: Tuple[Tuple[int, int], ...]  # (repetition, index within repetition)
    height: int
    width: int
    split_refused: bool = False  # oversized but would not break apart

    def __post_init__(self):
        if not self.members:
            raise ValueError("cluster must have at least one member")
        if len(self.source_labels) != len(self.members):
            raise ValueError("one provenance pair required per member")

    def __len__(self) -> int:
        return len(self.members)


def estimate_component_count(n_detections: int, n_repetitions: int) -> int:
    """Detections divided by repetitions, rounded half-up, at least 1."""
    if n_repetitions < 1:
        raise ValueError(f"n_repetitions must be >= 1, got {n_repetitions}")
    if n_detections == 0:
        raise ClusteringError("nothing to cluster: 0 detections")
    return max(1, (2 * n_detections + n_repetitions) // (2 * n_repetitions))


def box_features(s: SampleSet) -> np.ndarray:
    """(n, 4) matrix of (x1, y1, x2, y2) rows in detection order."""
    if not s.detections:
        raise ClusteringError("nothing to cluster: 0 detections")
    return np.array([d.bbox.as_tuple() for d in s.detections], dtype=np.float64)


def build_instance_clusters(s: SampleSet, labels: Sequence[int]) -> List[InstanceCluster]:
    """Group detections by label into clusters ordered by ascending label.

    Members inside a cluster are sorted by (repetition, within-repetition
    index); cluster ids are renumbered densely.
    """
    labels = np.asarray(labels)
    if labels.shape != (len(s.detections),):
        raise ValueError(
            f"labels shape {labels.shape} does not match {len(s.detections)} detections"
        )
    within = {}
    provenance = []
    for det in s.detections:
        idx = within.get(det.repetition, 0)
        within[det.repetition] = idx + 1
        provenance.append((det.repetition, idx))

    clusters = []
    for new_id, label in enumerate(np.unique(labels)):
        order = sorted(np.flatnonzero(labels == label), key=lambda i: provenance[i])
        clusters.append(
            InstanceCluster(
                cluster_id=new_id,
                members=tuple(s.detections[i] for i in order),
                source_labels=tuple(provenance[i] for i in order),
                height=s.height,
                width=s.width,
            )
        )
    return clusters


def labels_from_clusters(
    s: SampleSet, clusters: Sequence[InstanceCluster]
) -> np.ndarray:
    """Invert a clustering back to one cluster id per detection."""
    by_provenance = {}
    for c in clusters:
        for pair in c.source_labels:
            by_provenance[pair] = c.cluster_id
    within = {}
    labels = np.empty(len(s.detections), dtype=np.int64)
    for i, det in enumerate(s.detections):
        idx = within.get(det.repetition, 0)
        within[det.repetition] = idx + 1
        labels[i] = by_provenance[(det.repetition, idx)]
    return labels


def _renumber(clusters: List[InstanceCluster]) -> List[InstanceCluster]:
    return [replace(c, cluster_id=i) for i, c in enumerate(clusters)]


def _split_once(
    cluster: InstanceCluster, n_repetitions: int, cfg: ClusterConfig, depth: int
) -> List[InstanceCluster]:
    if len(cluster) <= cfg.split_threshold:
        return [cluster]
    if depth >= _MAX_SPLIT_DEPTH:
        return [replace(cluster, split_refused=True)]
    points = np.array([d.bbox.as_tuple() for d in cluster.members], dtype=np.float64)
    k_max = max(2, estimate_component_count(len(cluster), n_repetitions))
    state = fit_bgm(points, k_max, cfg)
    labels = assign_labels(state)
    if np.unique(labels).size < 2:
        return [replace(cluster, split_refused=True)]
    parts = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        parts.extend(
            _split_once(
                InstanceCluster(
                    cluster_id=cluster.cluster_id,
                    members=tuple(cluster.members[i] for i in idx),
                    source_labels=tuple(cluster.source_labels[i] for i in idx),
                    height=cluster.height,
                    width=cluster.width,
                ),
                n_repetitions,
                cfg,
                depth + 1,
            )
        )
    return parts


def split_oversized(
    clusters: Sequence[InstanceCluster], n_repetitions: int, cfg: ClusterConfig
) -> List[InstanceCluster]:
    """Re-cluster any group larger than the split threshold.

    Oversized clusters are refit with the mixture on their own box features
    (upper limit from the count heuristic, at least 2), recursively. A
    cluster that refuses to break apart is kept whole and flagged.
    """
    out: List[InstanceCluster] = []
    for cluster in clusters:
        out.extend(_split_once(cluster, n_repetitions, cfg, depth=0))
    return _renumber(out)


def cluster_pipeline(s: SampleSet, cfg: ClusterConfig = ClusterConfig()) -> List[InstanceCluster]:
    """Full clustering of one image's sampled detections.

    For the mixture the component upper limit gets headroom over the count
    heuristic (max(2*h, h+2)) and unused components are pruned by the
    stick-breaking prior; the agglomerative comparator uses the heuristic
    count directly.
    """
    points = box_features(s)
    heuristic = estimate_component_count(len(s.detections), s.n_repetitions)
    if cfg.algorithm == "bgm":
        k_max = max(2 * heuristic, heuristic + 2)
        state = fit_bgm(points, k_max, cfg)
        labels = assign_labels(state)
    else:
        labels = fit_agglomerative(points, min(heuristic, len(s.detections)))
    clusters = build_instance_clusters(s, labels)
    return split_oversized(clusters, s.n_repetitions, cfg)
