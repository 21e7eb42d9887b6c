"""Matching clustered predictions to ground truth and mAP at IoU 0.5.

AP follows the 101-point interpolation convention: precision is sampled at
recalls 0.00, 0.01, ..., 1.00 using the running-maximum envelope, and mAP
averages over classes with at least one ground-truth instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, IO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .ingest import ParseError
from .model import BBox, RleMask, box_iou, mask_iou
from .report import ClusterReport

__all__ = [
    "GroundTruthInstance",
    "PredictedInstance",
    "MatchRecord",
    "EvalResult",
    "cluster_to_detection",
    "match_and_score",
    "parse_ground_truth",
    "read_ground_truth",
    "serialize_ground_truth",
    "eval_csv",
]

_GT_KEYS = ["image_id", "bbox", "class_id"]


@dataclass(frozen=True)
class GroundTruthInstance:
    image_id: str
    bbox: BBox
    class_id: int  # foreground class, >= 1
    mask: Optional[RleMask] = None

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"class_id must be a foreground class, got {self.class_id}")


@dataclass(frozen=True)
class PredictedInstance:
    image_id: str
    bbox: BBox
    class_id: int
    confidence: float
    mask: Optional[RleMask] = None


@dataclass(frozen=True)
class MatchRecord:
    image_id: str
    pred_index: int          # index into the prediction list
    class_id: int
    confidence: float
    gt_index: Optional[int]  # index into the ground-truth list, None for FP
    iou: float


@dataclass(frozen=True)
class EvalResult:
    mode: str                          # "box" or "mask"
    per_class_ap: Dict[int, float]     # classes with >= 1 ground truth
    map50_box: Optional[float]
    map50_mask: Optional[float]
    matches: Tuple[MatchRecord, ...]

    @property
    def map50(self) -> Optional[float]:
        return self.map50_box if self.mode == "box" else self.map50_mask


def cluster_to_detection(r: ClusterReport, image_id: str = "") -> PredictedInstance:
    """Collapse a cluster report into a single detection.

    Box = mean box, class = best foreground mean score (background never
    wins), confidence = that mean score, mask = consensus unless zero_mask.
    """
    fg_means = r.class_stats.mean_scores[1:]
    class_id = 1 + int(np.argmax(fg_means))
    return PredictedInstance(
        image_id=image_id,
        bbox=r.box_stats.mean_box,
        class_id=class_id,
        confidence=float(fg_means[class_id - 1]),
        mask=None if r.mask_stats.zero_mask else r.mask_stats.consensus_mask,
    )


def _pair_iou(pred: PredictedInstance, gt: GroundTruthInstance, mode: str) -> float:
    if mode == "box":
        return box_iou(pred.bbox, gt.bbox)
    if pred.mask is None or gt.mask is None:
        return 0.0
    return mask_iou(pred.mask, gt.mask)


def _interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated AP from cumulative PR points."""
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        reachable = precision[recall >= r]
        ap += float(reachable.max()) if reachable.size else 0.0
    return ap / 101.0


def match_and_score(
    preds: Sequence[PredictedInstance],
    gts: Sequence[GroundTruthInstance],
    iou_threshold: float = 0.5,
    mode: str = "box",
) -> EvalResult:
    """Greedy confidence-ordered matching and per-class AP.

    Within a class, predictions are taken by descending confidence (input
    order breaks ties) and each matches the unmatched same-image ground
    truth with the highest IoU >= threshold. In mask mode a missing mask on
    either side scores IoU 0. An empty ground-truth set leaves mAP absent.
    """
    if mode not in ("box", "mask"):
        raise ValueError(f"mode must be 'box' or 'mask', got {mode!r}")
    gt_classes = sorted({g.class_id for g in gts})
    per_class_ap: Dict[int, float] = {}
    matches: List[MatchRecord] = []
    gt_matched = [False] * len(gts)

    for cls in gt_classes:
        gt_idx = [i for i, g in enumerate(gts) if g.class_id == cls]
        pred_idx = [i for i, p in enumerate(preds) if p.class_id == cls]
        pred_idx.sort(key=lambda i: -preds[i].confidence)
        tp = np.zeros(len(pred_idx))
        fp = np.zeros(len(pred_idx))
        for rank, pi in enumerate(pred_idx):
            pred = preds[pi]
            best_iou = 0.0
            best_gt = None
            for gi in gt_idx:
                if gt_matched[gi] or gts[gi].image_id != pred.image_id:
                    continue
                iou = _pair_iou(pred, gts[gi], mode)
                if iou >= iou_threshold and iou > best_iou:
                    best_iou = iou
                    best_gt = gi
            if best_gt is not None:
                gt_matched[best_gt] = True
                tp[rank] = 1.0
            else:
                fp[rank] = 1.0
            matches.append(
                MatchRecord(
                    image_id=pred.image_id,
                    pred_index=pi,
                    class_id=cls,
                    confidence=pred.confidence,
                    gt_index=best_gt,
                    iou=best_iou,
                )
            )
        if len(pred_idx) == 0:
            per_class_ap[cls] = 0.0
            continue
        cum_tp = np.cumsum(tp)
        cum_fp = np.cumsum(fp)
        recall = cum_tp / len(gt_idx)
        precision = cum_tp / (cum_tp + cum_fp)
        per_class_ap[cls] = _interpolated_ap(recall, precision)

    map50 = (
        sum(per_class_ap.values()) / len(per_class_ap) if per_class_ap else None
    )
    return EvalResult(
        mode=mode,
        per_class_ap=per_class_ap,
        map50_box=map50 if mode == "box" else None,
        map50_mask=map50 if mode == "mask" else None,
        matches=tuple(matches),
    )


def parse_ground_truth(
    stream: Union[str, IO[str], Iterable[str]],
    height: int,
    width: int,
) -> List[GroundTruthInstance]:
    """Parse line-delimited {"image_id", "bbox", "class_id", "mask_runs"?}."""
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in stream]
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON ({exc.msg})") from exc
        keys = list(obj.keys()) if isinstance(obj, dict) else []
        if keys not in (_GT_KEYS, _GT_KEYS + ["mask_runs"]):
            raise ParseError(
                lineno, f"fields must be {_GT_KEYS} (+ optional mask_runs), got {keys}"
            )
        try:
            mask = None
            if "mask_runs" in obj:
                mask = RleMask(
                    height=height,
                    width=width,
                    runs=tuple(int(r) for r in obj["mask_runs"]),
                )
            out.append(
                GroundTruthInstance(
                    image_id=str(obj["image_id"]),
                    bbox=BBox(*(float(v) for v in obj["bbox"])),
                    class_id=int(obj["class_id"]),
                    mask=mask,
                )
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, str(exc)) from exc
    return out


def read_ground_truth(path, height: int, width: int) -> List[GroundTruthInstance]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ground_truth(fh, height, width)


def serialize_ground_truth(gts: Sequence[GroundTruthInstance]) -> str:
    lines = []
    for g in gts:
        rec = {
            "image_id": g.image_id,
            "bbox": list(g.bbox.as_tuple()),
            "class_id": g.class_id,
        }
        if g.mask is not None:
            rec["mask_runs"] = list(g.mask.runs)
        lines.append(json.dumps(rec))
    return "\n".join(lines) + ("\n" if lines else "")


def eval_csv(results: Sequence[EvalResult]) -> str:
    """Per-class AP rows plus a summary row per evaluated mode."""
    out = ["mode,class_id,ap"]
    for res in results:
        for cls in sorted(res.per_class_ap):
            out.append(f"{res.mode},{cls},{res.per_class_ap[cls]!r}")
        summary = res.map50
        out.append(f"{res.mode},mAP,{'' if summary is None else repr(summary)}")
    return "\n".join(out) + "\n"
