"""Per-cluster uncertainty statistics: boxes, class scores, masks, IoU KDEs.

The cluster is treated as the complete MC sample, so every spread figure is
a population (not sample) standard deviation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .clustering import InstanceCluster
from .model import BBox, RleMask, box_iou, mask_iou, rle_decode, rle_encode

__all__ = [
    "BoxStats",
    "ClassStats",
    "MaskStats",
    "KdeCurve",
    "ClusterReport",
    "DegenerateSamples",
    "box_stats",
    "class_stats",
    "mask_stats",
    "iou_to_mean",
    "kde",
    "build_report",
    "report_to_json",
    "write_pgm",
]


class DegenerateSamples(ValueError):
    """Fewer than two samples, or zero variance: no density to estimate."""


@dataclass(frozen=True)
class BoxStats:
    mean_box: BBox
    edge_std: Tuple[float, float, float, float]  # std of x1, y1, x2, y2
    centers: Tuple[Tuple[float, float], ...]     # per-member box centers


@dataclass(frozen=True)
class ClassStats:
    mean_scores: Tuple[float, ...]
    std_scores: Tuple[float, ...]
    top_classes: Tuple[int, ...]  # class indices sorted by mean, descending


@dataclass(frozen=True)
class MaskStats:
    mean_mask: np.ndarray        # (H, W) in [0, 1]
    std_mask: np.ndarray         # (H, W) non-negative
    consensus_mask: RleMask      # mean >= threshold
    zero_mask: bool              # consensus has no foreground (or no masks at all)
    coverage_count: int          # members that carry a mask
    mask_threshold: float


@dataclass(frozen=True)
class KdeCurve:
    grid: Tuple[float, ...]
    density: Tuple[float, ...]
    bandwidth: float
    sample_mean: float
    sample_std: float


@dataclass(frozen=True)
class ClusterReport:
    cluster_id: int
    box_stats: BoxStats
    class_stats: ClassStats
    mask_stats: MaskStats
    box_iou_samples: Tuple[float, ...]
    mask_iou_samples: Tuple[float, ...]
    box_kde: Optional[KdeCurve]   # None when samples are degenerate
    mask_kde: Optional[KdeCurve]
    split_refused: bool = False


def box_stats(c: InstanceCluster) -> BoxStats:
    """Coordinate-wise mean box, per-edge std, and member centers."""
    coords = np.array([m.bbox.as_tuple() for m in c.members], dtype=np.float64)
    mean = coords.mean(axis=0)
    std = coords.std(axis=0)
    return BoxStats(
        mean_box=BBox(*(float(v) for v in mean)),
        edge_std=tuple(float(v) for v in std),
        centers=tuple(m.bbox.center for m in c.members),
    )


def class_stats(c: InstanceCluster) -> ClassStats:
    """Per-class score mean and std across members, background included."""
    lengths = {len(m.scores) for m in c.members}
    if len(lengths) != 1:
        raise ValueError(f"members disagree on class count: {sorted(lengths)}")
    scores = np.array([m.scores.scores for m in c.members], dtype=np.float64)
    mean = scores.mean(axis=0)
    std = scores.std(axis=0)
    # Stable order: ties broken toward the lower class index.
    top = np.argsort(-mean, kind="stable")
    return ClassStats(
        mean_scores=tuple(float(v) for v in mean),
        std_scores=tuple(float(v) for v in std),
        top_classes=tuple(int(i) for i in top),
    )


def mask_stats(c: InstanceCluster, mask_threshold: float = 0.5) -> MaskStats:
    """Pixelwise mean/std over mask-carrying members plus the consensus mask.

    The mean at a pixel is the fraction of mask-carrying members with
    foreground there; the consensus binarizes the mean at the threshold.
    zero_mask flags a cluster whose consensus has no foreground at all.
    """
    masks = [m.mask for m in c.members if m.mask is not None]
    for m in masks:
        if m.height != c.height or m.width != c.width:
            raise ValueError(
                f"mask dims {m.height}x{m.width} differ from image dims "
                f"{c.height}x{c.width}"
            )
    if masks:
        stack = np.stack([rle_decode(m) for m in masks]).astype(np.float64)
        mean = stack.mean(axis=0)
        std = stack.std(axis=0)
    else:
        mean = np.zeros((c.height, c.width))
        std = np.zeros((c.height, c.width))
    consensus = rle_encode(mean >= mask_threshold)
    return MaskStats(
        mean_mask=mean,
        std_mask=std,
        consensus_mask=consensus,
        zero_mask=consensus.is_empty or not masks,
        coverage_count=len(masks),
        mask_threshold=mask_threshold,
    )


def iou_to_mean(
    c: InstanceCluster, s: BoxStats, m: MaskStats
) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """IoU of each member against the cluster-mean box / consensus mask.

    Box samples cover every member; mask samples cover mask-carrying members
    and are empty for a zero-mask cluster (no reference to compare against).
    """
    box_samples = tuple(box_iou(member.bbox, s.mean_box) for member in c.members)
    if m.zero_mask:
        return box_samples, ()
    mask_samples = tuple(
        mask_iou(member.mask, m.consensus_mask)
        for member in c.members
        if member.mask is not None
    )
    return box_samples, mask_samples


def kde(samples: Sequence[float], grid_size: int = 256) -> KdeCurve:
    """Gaussian kernel density with Scott's bandwidth sigma * n^(-1/5).

    The curve is evaluated on a uniform grid spanning [min - 3h, max + 3h].
    Raises DegenerateSamples for fewer than two samples or zero variance.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise DegenerateSamples(f"need >= 2 samples, got {x.size}")
    std = float(x.std())
    if std == 0.0:
        raise DegenerateSamples("samples have zero variance")
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size}")
    h = std * x.size ** (-0.2)
    grid = np.linspace(x.min() - 3.0 * h, x.max() + 3.0 * h, grid_size)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * math.sqrt(2.0 * math.pi))
    return KdeCurve(
        grid=tuple(float(v) for v in grid),
        density=tuple(float(v) for v in density),
        bandwidth=h,
        sample_mean=float(x.mean()),
        sample_std=std,
    )


def build_report(c: InstanceCluster, mask_threshold: float = 0.5) -> ClusterReport:
    """Full uncertainty report for one cluster.

    KDE curves are left out (None) when the IoU samples are degenerate,
    e.g. singleton clusters or all-identical members.
    """
    bstats = box_stats(c)
    cstats = class_stats(c)
    mstats = mask_stats(c, mask_threshold)
    box_samples, mask_samples = iou_to_mean(c, bstats, mstats)
    try:
        box_kde = kde(box_samples)
    except DegenerateSamples:
        box_kde = None
    try:
        mask_kde = kde(mask_samples)
    except DegenerateSamples:
        mask_kde = None
    return ClusterReport(
        cluster_id=c.cluster_id,
        box_stats=bstats,
        class_stats=cstats,
        mask_stats=mstats,
        box_iou_samples=box_samples,
        mask_iou_samples=mask_samples,
        box_kde=box_kde,
        mask_kde=mask_kde,
        split_refused=c.split_refused,
    )


def _kde_dict(curve: Optional[KdeCurve]):
    if curve is None:
        return None
    return {
        "grid": list(curve.grid),
        "density": list(curve.density),
        "bandwidth": curve.bandwidth,
        "sample_mean": curve.sample_mean,
        "sample_std": curve.sample_std,
    }


def report_to_json(r: ClusterReport) -> str:
    """Deterministic JSON rendering of a report (heatmaps as RLE + PGM ref).

    Schema: cluster_id, split_refused, box{mean, edge_std, centers},
    classes{mean, std, top}, mask{consensus_runs, zero_mask, coverage_count,
    threshold}, iou{box_samples, mask_samples}, kde{box, mask}. Dense
    heatmap pixels live in the PGM exports, not in the JSON.
    """
    doc = {
        "cluster_id": r.cluster_id,
        "split_refused": r.split_refused,
        "box": {
            "mean": list(r.box_stats.mean_box.as_tuple()),
            "edge_std": list(r.box_stats.edge_std),
            "centers": [list(c) for c in r.box_stats.centers],
        },
        "classes": {
            "mean": list(r.class_stats.mean_scores),
            "std": list(r.class_stats.std_scores),
            "top": list(r.class_stats.top_classes),
        },
        "mask": {
            "height": r.mask_stats.consensus_mask.height,
            "width": r.mask_stats.consensus_mask.width,
            "consensus_runs": list(r.mask_stats.consensus_mask.runs),
            "zero_mask": r.mask_stats.zero_mask,
            "coverage_count": r.mask_stats.coverage_count,
            "threshold": r.mask_stats.mask_threshold,
        },
        "iou": {
            "box_samples": list(r.box_iou_samples),
            "mask_samples": list(r.mask_iou_samples),
        },
        "kde": {"box": _kde_dict(r.box_kde), "mask": _kde_dict(r.mask_kde)},
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_pgm(values: np.ndarray, path) -> None:
    """Write an (H, W) array of [0, 1] values as a binary 8-bit PGM."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("values must lie in [0, 1]")
    pixels = np.rint(arr * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
