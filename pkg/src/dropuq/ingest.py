"""Parsing and validation of prediction-sample files, plus score filtering.

File format (one file per image, one JSON object per line):

    {"image_id": "...", "height": H, "width": W, "n_repetitions": N, "num_classes": K}
    {"repetition": R, "bbox": [x1, y1, x2, y2], "scores": [K+1 reals], "mask_runs": [ints]}
    ...

The first line is the header; every following line is one detection.
``scores[0]`` is the background class. ``mask_runs`` is optional and holds
the run-length encoding of the binary mask (background run first). Field
order is fixed and unknown fields are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, List, Union

from .model import BBox, Detection, RleMask, SampleSet, ScoreVector

__all__ = [
    "IngestConfig",
    "ParseError",
    "parse_sample_set",
    "read_sample_set",
    "serialize_sample_set",
    "write_sample_set",
    "filter_background",
    "apply_legacy_class_filter",
]

_HEADER_KEYS = ["image_id", "height", "width", "n_repetitions", "num_classes"]
_DET_KEYS = ["repetition", "bbox", "scores"]


class ParseError(ValueError):
    """Malformed record; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class IngestConfig:
    background_threshold: float = 0.45  # erase detections whose background score exceeds this
    clamp_boxes: bool = True            # clamp boxes into the image instead of rejecting
    legacy_class_filter: bool = False   # original detector rule, off by default
    legacy_threshold: float = 0.05      # keep only detections with a foreground score above this

    def __post_init__(self):
        if not 0.0 <= self.background_threshold <= 1.0:
            raise ValueError(
                f"background_threshold must be in [0, 1], got {self.background_threshold}"
            )


def _record(line: str, line_number: int, expected_keys: List[str], optional: List[str]):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(line_number, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ParseError(line_number, "record must be a JSON object")
    keys = list(obj.keys())
    allowed = expected_keys + optional
    if keys[: len(expected_keys)] != expected_keys or any(
        k not in allowed for k in keys[len(expected_keys):]
    ):
        raise ParseError(
            line_number,
            f"fields must be {expected_keys} (+ optional {optional}), got {keys}",
        )
    return obj


def parse_sample_set(
    stream: Union[str, IO[str], Iterable[str]],
    cfg: IngestConfig = IngestConfig(),
) -> SampleSet:
    """Parse line-delimited prediction samples into a validated SampleSet.

    Detections are grouped and sorted by repetition index (stable within a
    repetition). Raises ParseError with the offending line number on any
    malformed record.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in stream]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not lines:
        raise ParseError(1, "missing header record")

    lineno, header_line = lines[0]
    header = _record(header_line, lineno, _HEADER_KEYS, [])
    try:
        image_id = str(header["image_id"])
        height = int(header["height"])
        width = int(header["width"])
        n_repetitions = int(header["n_repetitions"])
        num_classes = int(header["num_classes"])
    except (TypeError, ValueError) as exc:
        raise ParseError(lineno, f"bad header value ({exc})") from exc
    if num_classes < 1:
        raise ParseError(lineno, f"num_classes must be >= 1, got {num_classes}")

    detections = []
    for lineno, line in lines[1:]:
        obj = _record(line, lineno, _DET_KEYS, ["mask_runs"])
        try:
            repetition = int(obj["repetition"])
            box_vals = [float(v) for v in obj["bbox"]]
            score_vals = [float(v) for v in obj["scores"]]
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, f"bad field value ({exc})") from exc
        if len(box_vals) != 4:
            raise ParseError(lineno, f"bbox needs 4 values, got {len(box_vals)}")
        if len(score_vals) != num_classes + 1:
            raise ParseError(
                lineno,
                f"scores has {len(score_vals)} entries, expected "
                f"{num_classes + 1} (k={num_classes} classes + background)",
            )
        if not 0 <= repetition < n_repetitions:
            raise ParseError(
                lineno,
                f"repetition {repetition} out of range [0, {n_repetitions})",
            )
        try:
            bbox = BBox(*box_vals)
            if cfg.clamp_boxes:
                bbox = bbox.clamped(width, height)
            scores = ScoreVector(tuple(score_vals))
            mask = None
            if "mask_runs" in obj:
                runs = tuple(int(r) for r in obj["mask_runs"])
                mask = RleMask(height=height, width=width, runs=runs)
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, str(exc)) from exc
        detections.append(
            Detection(bbox=bbox, scores=scores, mask=mask, repetition=repetition)
        )

    detections.sort(key=lambda d: d.repetition)
    try:
        return SampleSet(
            image_id=image_id,
            height=height,
            width=width,
            n_repetitions=n_repetitions,
            detections=tuple(detections),
        )
    except ValueError as exc:
        raise ParseError(lines[0][0], str(exc)) from exc


def read_sample_set(path, cfg: IngestConfig = IngestConfig()) -> SampleSet:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sample_set(fh, cfg)


def serialize_sample_set(s: SampleSet) -> str:
    """Render a SampleSet back into the line-delimited file format."""
    out = [
        json.dumps(
            {
                "image_id": s.image_id,
                "height": s.height,
                "width": s.width,
                "n_repetitions": s.n_repetitions,
                "num_classes": s.detections[0].scores.num_classes
                if s.detections
                else 1,
            }
        )
    ]
    for det in s.detections:
        rec = {
            "repetition": det.repetition,
            "bbox": list(det.bbox.as_tuple()),
            "scores": list(det.scores.scores),
        }
        if det.mask is not None:
            rec["mask_runs"] = list(det.mask.runs)
        out.append(json.dumps(rec))
    return "\n".join(out) + "\n"


def write_sample_set(s: SampleSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_sample_set(s))


def filter_background(s: SampleSet, cfg: IngestConfig = IngestConfig()) -> SampleSet:
    """Erase detections whose background score is above the threshold.

    Strictly above: a background score equal to the threshold survives.
    Surviving detections are untouched and keep their order.
    """
    kept = tuple(
        d for d in s.detections if d.scores.background <= cfg.background_threshold
    )
    return SampleSet(
        image_id=s.image_id,
        height=s.height,
        width=s.width,
        n_repetitions=s.n_repetitions,
        detections=kept,
    )


def apply_legacy_class_filter(
    s: SampleSet, cfg: IngestConfig = IngestConfig()
) -> SampleSet:
    """Original detector rule: drop detections with no foreground score above
    the legacy threshold. Provided for A/B comparison, off by default."""
    if not cfg.legacy_class_filter:
        return s
    kept = tuple(
        d for d in s.detections if max(d.scores.scores[1:]) > cfg.legacy_threshold
    )
    return SampleSet(
        image_id=s.image_id,
        height=s.height,
        width=s.width,
        n_repetitions=s.n_repetitions,
        detections=kept,
    )
