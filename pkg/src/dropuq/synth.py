"""Synthetic MC-Dropout sample generation with known ground truth.

Scenes are the test oracle for the rest of the library: every detection
carries a known instance label, so clustering recovery, statistics and
evaluation can be checked against the generating truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .calibration import CalibrationRecord, LogitVector
from .evaluation import GroundTruthInstance
from .model import BBox, Detection, SampleSet, ScoreVector, rle_encode

__all__ = [
    "InstanceSpec",
    "SceneSpec",
    "generate",
    "generate_calibration_records",
    "adjusted_rand_index",
    "scene_spec_from_json",
    "scene_spec_to_json",
]

_SHAPES = ("box", "ellipse", "none")


@dataclass(frozen=True)
class InstanceSpec:
    true_box: BBox
    true_class: int                 # foreground class id, >= 1
    shape: str = "ellipse"          # "box", "ellipse", or "none" (no masks emitted)
    box_jitter_sigma: float = 0.0   # Gaussian noise per box edge, pixels
    class_confusion: float = 0.0    # score mass leaked away from the true class
    mask_noise: float = 0.0         # per-pixel flip probability near the contour
    miss_rate: float = 0.0          # probability a repetition omits the instance

    def __post_init__(self):
        if self.true_class < 1:
            raise ValueError(f"true_class must be >= 1, got {self.true_class}")
        if self.shape not in _SHAPES:
            raise ValueError(f"shape must be one of {_SHAPES}, got {self.shape!r}")
        for name in ("class_confusion", "mask_noise", "miss_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.box_jitter_sigma < 0.0:
            raise ValueError(f"box_jitter_sigma must be >= 0, got {self.box_jitter_sigma}")


@dataclass(frozen=True)
class SceneSpec:
    image_id: str
    height: int
    width: int
    num_classes: int
    n_repetitions: int
    instances: Tuple[InstanceSpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.n_repetitions < 1:
            raise ValueError(f"n_repetitions must be >= 1, got {self.n_repetitions}")
        for inst in self.instances:
            if inst.true_class > self.num_classes:
                raise ValueError(
                    f"true_class {inst.true_class} exceeds num_classes {self.num_classes}"
                )


def _render_shape(box: BBox, shape: str, height: int, width: int) -> np.ndarray:
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    if shape == "box":
        return ((rows >= box.y1) & (rows < box.y2))[:, None] & (
            (cols >= box.x1) & (cols < box.x2)
        )[None, :]
    cx, cy = box.center
    ax = max(box.width / 2.0, 1e-9)
    ay = max(box.height / 2.0, 1e-9)
    return ((cols - cx) / ax)[None, :] ** 2 + ((rows - cy) / ay)[:, None] ** 2 <= 1.0


def _dilate(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:, :] |= m[:-1, :]
    out[:-1, :] |= m[1:, :]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def _erode(m: np.ndarray) -> np.ndarray:
    return ~_dilate(~m)


def _contour_band(m: np.ndarray, radius: int = 2) -> np.ndarray:
    grown, shrunk = m, m
    for _ in range(radius):
        grown = _dilate(grown)
        shrunk = _erode(shrunk)
    return grown & ~shrunk


def _jitter_box(
    box: BBox, sigma: float, width: int, height: int, rng: np.random.Generator
) -> BBox:
    for _ in range(100):
        dx1, dy1, dx2, dy2 = rng.normal(0.0, sigma, 4) if sigma > 0 else (0.0,) * 4
        x1 = min(max(box.x1 + dx1, 0.0), float(width))
        y1 = min(max(box.y1 + dy1, 0.0), float(height))
        x2 = min(max(box.x2 + dx2, 0.0), float(width))
        y2 = min(max(box.y2 + dy2, 0.0), float(height))
        if x1 < x2 and y1 < y2:
            return BBox(x1, y1, x2, y2)
    return box.clamped(width, height)


def _sample_scores(
    inst: InstanceSpec, num_classes: int, rng: np.random.Generator
) -> ScoreVector:
    # Half the leaked mass goes to background (it shows up among the top
    # scores of every instance), the rest spreads over the other classes.
    scores = np.zeros(num_classes + 1)
    leak = inst.class_confusion
    scores[inst.true_class] = 1.0 - leak
    others = [c for c in range(1, num_classes + 1) if c != inst.true_class]
    if others:
        scores[0] = 0.5 * leak
        if leak > 0.0:
            scores[others] = 0.5 * leak * rng.dirichlet(np.ones(len(others)))
    else:
        scores[0] = leak
    return ScoreVector(tuple(float(v) for v in scores))


def generate(
    spec: SceneSpec,
) -> Tuple[SampleSet, List[int], List[GroundTruthInstance]]:
    """Sample a scene: returns (sample set, per-detection true labels, GT).

    Per repetition and instance, with probability 1 - miss_rate, emits one
    detection with jittered box edges, a score vector concentrated on the
    true class, and the true shape with contour-band pixel flips.
    Deterministic given the spec (seed included).
    """
    rng = np.random.default_rng(spec.seed)
    shapes = [
        None
        if inst.shape == "none"
        else _render_shape(inst.true_box, inst.shape, spec.height, spec.width)
        for inst in spec.instances
    ]
    bands = [None if s is None else _contour_band(s) for s in shapes]

    detections: List[Detection] = []
    labels: List[int] = []
    for rep in range(spec.n_repetitions):
        for idx, inst in enumerate(spec.instances):
            if rng.random() < inst.miss_rate:
                continue
            box = _jitter_box(inst.true_box, inst.box_jitter_sigma, spec.width, spec.height, rng)
            scores = _sample_scores(inst, spec.num_classes, rng)
            mask = None
            if shapes[idx] is not None:
                grid = shapes[idx]
                if inst.mask_noise > 0.0:
                    grid = grid.copy()
                    band_idx = np.flatnonzero(bands[idx])
                    flips = band_idx[rng.random(band_idx.size) < inst.mask_noise]
                    flat = grid.reshape(-1)
                    flat[flips] = ~flat[flips]
                mask = rle_encode(grid)
            detections.append(
                Detection(bbox=box, scores=scores, mask=mask, repetition=rep)
            )
            labels.append(idx)

    sample_set = SampleSet(
        image_id=spec.image_id,
        height=spec.height,
        width=spec.width,
        n_repetitions=spec.n_repetitions,
        detections=tuple(detections),
    )
    gts = [
        GroundTruthInstance(
            image_id=spec.image_id,
            bbox=inst.true_box,
            class_id=inst.true_class,
            mask=None if shapes[i] is None else rle_encode(shapes[i]),
        )
        for i, inst in enumerate(spec.instances)
    ]
    return sample_set, labels, gts


def generate_calibration_records(
    n: int, true_temperature: float, k: int, seed: int = 0
) -> List[CalibrationRecord]:
    """Records whose NLL-optimal temperature is the given one.

    Base logits are drawn calibrated (labels sampled from their own
    softmax), then multiplied by the temperature; fitting on the output
    recovers approximately that temperature.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if true_temperature <= 0:
        raise ValueError(f"true_temperature must be positive, got {true_temperature}")
    rng = np.random.default_rng(seed)
    base = rng.normal(0.0, 1.5, size=(n, k + 1))
    shifted = base - base.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(n)
    y = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    z = base * true_temperature
    return [
        CalibrationRecord(
            logits=LogitVector(tuple(float(v) for v in z[i])), true_class=int(y[i])
        )
        for i in range(n)
    ]


def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    """Chance-corrected agreement between two labelings of the same items."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"label shapes differ: {a.shape} vs {b.shape}")
    n = a.size
    if n == 0:
        raise ValueError("empty labelings")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def scene_spec_to_json(spec: SceneSpec) -> str:
    doc = {
        "image_id": spec.image_id,
        "height": spec.height,
        "width": spec.width,
        "num_classes": spec.num_classes,
        "n_repetitions": spec.n_repetitions,
        "seed": spec.seed,
        "instances": [
            {
                "box": list(inst.true_box.as_tuple()),
                "class_id": inst.true_class,
                "shape": inst.shape,
                "box_jitter_sigma": inst.box_jitter_sigma,
                "class_confusion": inst.class_confusion,
                "mask_noise": inst.mask_noise,
                "miss_rate": inst.miss_rate,
            }
            for inst in spec.instances
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def scene_spec_from_json(text: str) -> SceneSpec:
    doc = json.loads(text)
    instances = tuple(
        InstanceSpec(
            true_box=BBox(*(float(v) for v in inst["box"])),
            true_class=int(inst["class_id"]),
            shape=inst.get("shape", "ellipse"),
            box_jitter_sigma=float(inst.get("box_jitter_sigma", 0.0)),
            class_confusion=float(inst.get("class_confusion", 0.0)),
            mask_noise=float(inst.get("mask_noise", 0.0)),
            miss_rate=float(inst.get("miss_rate", 0.0)),
        )
        for inst in doc["instances"]
    )
    return SceneSpec(
        image_id=str(doc["image_id"]),
        height=int(doc["height"]),
        width=int(doc["width"]),
        num_classes=int(doc["num_classes"]),
        n_repetitions=int(doc["n_repetitions"]),
        instances=instances,
        seed=int(doc.get("seed", 0)),
    )
