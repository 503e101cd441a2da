"""3D box algebra, anchor grids, target assignment and non-maximum suppression.

Boxes are axis-aligned and half-open, ``[min, max)``, in continuous voxel
coordinates with axes ordered ``(z, y, x)``.  Volumes are plain products of
extents; there are no +1 conventions anywhere.  All ties (equal scores,
equal overlaps) break toward the lowest index so results are bitwise
reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputFormatError

# Per-anchor assignment labels; non-negative values index the matched GT box.
NEGATIVE = -1
IGNORE = -2


@dataclass(frozen=True)
class Box3:
    """Axis-aligned half-open box ``[min, max)`` in (z, y, x) order."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise ConfigError("Box3 requires 3 coordinates per corner")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ConfigError("Box3 coordinates must be finite")
        if not all(h > l for l, h in zip(lo, hi)):
            raise ConfigError(f"Box3 must have positive extent, got min={lo} max={hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> tuple[float, float, float]:
        return tuple(h - l for l, h in zip(self.min, self.max))

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple(0.5 * (l + h) for l, h in zip(self.min, self.max))

    @property
    def volume(self) -> float:
        e = self.extent
        return e[0] * e[1] * e[2]

    def as_array(self) -> np.ndarray:
        """[z0, y0, x0, z1, y1, x1] float64."""
        return np.array(self.min + self.max, dtype=np.float64)

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "Box3":
        a = np.asarray(arr, dtype=np.float64)
        if a.shape != (6,):
            raise ConfigError(f"box array must have 6 entries, got shape {a.shape}")
        return cls(min=tuple(a[:3]), max=tuple(a[3:]))


@dataclass(frozen=True)
class BoxDelta:
    """Box offset relative to an anchor: center shift in units of the anchor
    extent plus log extent ratios."""

    center_offset: tuple[float, float, float]
    log_shape_ratio: tuple[float, float, float]

    def __post_init__(self):
        vals = tuple(self.center_offset) + tuple(self.log_shape_ratio)
        if not all(math.isfinite(float(v)) for v in vals):
            raise ConfigError("BoxDelta components must be finite")


@dataclass(frozen=True)
class Detection:
    """One detected object: a box with a confidence score and class label."""

    case_id: str
    box: Box3
    score: float
    label: int = 1

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ConfigError("detection score must be finite")


@dataclass(frozen=True)
class AnchorLevel:
    stride: int
    boxes: np.ndarray  # (N, 6) float64, ordering: z-cell, y-cell, x-cell, template


@dataclass(frozen=True)
class AnchorGrid:
    """Anchors for one image, level-major with deterministic within-level order."""

    levels: tuple[AnchorLevel, ...]

    def __post_init__(self):
        strides = [lv.stride for lv in self.levels]
        if any(b >= a for a, b in zip(strides[1:], strides[:-1])):
            raise ConfigError(f"anchor level strides must be strictly increasing, got {strides}")

    @property
    def all_boxes(self) -> np.ndarray:
        if not self.levels:
            return np.zeros((0, 6))
        return np.concatenate([lv.boxes for lv in self.levels], axis=0)

    def __len__(self) -> int:
        return sum(len(lv.boxes) for lv in self.levels)


@dataclass(frozen=True)
class Assignment:
    """Per-anchor training label: matched GT index, NEGATIVE or IGNORE."""

    labels: np.ndarray  # (A,) int64

    def positive_mask(self) -> np.ndarray:
        return self.labels >= 0

    def negative_mask(self) -> np.ndarray:
        return self.labels == NEGATIVE

    def ignore_mask(self) -> np.ndarray:
        return self.labels == IGNORE


def _boxes_array(boxes: Iterable[Box3] | np.ndarray) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.astype(np.float64, copy=False).reshape(-1, 6)
    return np.array([b.as_array() for b in boxes], dtype=np.float64).reshape(-1, 6)


def boxes_volume(boxes: np.ndarray) -> np.ndarray:
    ext = boxes[:, 3:] - boxes[:, :3]
    return np.prod(ext, axis=1)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between (N, 6) and (M, 6) box arrays."""
    a = _boxes_array(a)
    b = _boxes_array(b)
    lo = np.maximum(a[:, None, :3], b[None, :, :3])
    hi = np.minimum(a[:, None, 3:], b[None, :, 3:])
    inter = np.prod(np.clip(hi - lo, 0.0, None), axis=2)
    union = boxes_volume(a)[:, None] + boxes_volume(b)[None, :] - inter
    return inter / union


def iou(a: Box3, b: Box3) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    return float(pairwise_iou(a.as_array()[None], b.as_array()[None])[0, 0])


def giou(a: Box3, b: Box3) -> float:
    """Generalized IoU: IoU minus the empty fraction of the enclosing hull."""
    i = iou(a, b)
    lo = np.minimum(np.asarray(a.min), np.asarray(b.min))
    hi = np.maximum(np.asarray(a.max), np.asarray(b.max))
    hull = float(np.prod(hi - lo))
    inter_lo = np.maximum(np.asarray(a.min), np.asarray(b.min))
    inter_hi = np.minimum(np.asarray(a.max), np.asarray(b.max))
    inter = float(np.prod(np.clip(inter_hi - inter_lo, 0.0, None)))
    union = a.volume + b.volume - inter
    return i - (hull - union) / hull


def encode(anchor: Box3, target: Box3) -> BoxDelta:
    """Offset of ``target`` relative to ``anchor``; exact inverse of decode."""
    a_c = np.asarray(anchor.center)
    a_e = np.asarray(anchor.extent)
    t_c = np.asarray(target.center)
    t_e = np.asarray(target.extent)
    off = (t_c - a_c) / a_e
    log_ratio = np.log(t_e / a_e)
    return BoxDelta(center_offset=tuple(off), log_shape_ratio=tuple(log_ratio))


def decode(anchor: Box3, delta: BoxDelta) -> Box3:
    """Apply a delta to an anchor: shift the center by offset * extent and
    scale the extent by exp(log_shape_ratio)."""
    a_c = np.asarray(anchor.center)
    a_e = np.asarray(anchor.extent)
    c = a_c + np.asarray(delta.center_offset) * a_e
    e = a_e * np.exp(np.asarray(delta.log_shape_ratio))
    return Box3(min=tuple(c - e / 2), max=tuple(c + e / 2))


def decode_batch(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Vectorized decode over (N, 6) anchors and (N, 6) deltas
    [dz, dy, dx, sz, sy, sx]; returns (N, 6) boxes."""
    anchors = _boxes_array(anchors)
    deltas = np.asarray(deltas, dtype=np.float64)
    a_c = 0.5 * (anchors[:, :3] + anchors[:, 3:])
    a_e = anchors[:, 3:] - anchors[:, :3]
    c = a_c + deltas[:, :3] * a_e
    e = a_e * np.exp(deltas[:, 3:])
    return np.concatenate([c - e / 2, c + e / 2], axis=1)


def anchor_templates(base_size: float, aspect_ratios: Sequence[Sequence[float]]) -> np.ndarray:
    """Anchor extents (T, 3) for one base size.

    Each ratio triple is normalized to unit product, so every template keeps
    the base volume: extent = base_size * (rz, ry, rx) with rz*ry*rx = 1.
    """
    if len(aspect_ratios) == 0:
        raise ConfigError("at least one anchor aspect ratio is required")
    if base_size <= 0:
        raise ConfigError("anchor base size must be positive")
    out = []
    for ratio in aspect_ratios:
        r = np.asarray(ratio, dtype=np.float64)
        if r.shape != (3,) or np.any(r <= 0):
            raise ConfigError(f"aspect ratio must be 3 positive reals, got {ratio}")
        r = r / np.cbrt(np.prod(r))
        out.append(base_size * r)
    return np.stack(out, axis=0)


def generate_anchors(
    image_shape: Sequence[int],
    level_strides: Sequence[int],
    base_sizes: Sequence[float],
    aspect_ratios: Sequence[Sequence[float]],
) -> AnchorGrid:
    """Tile anchor templates over every feature cell of every level.

    One anchor per (cell, template), centered at (cell_index + 0.5) * stride
    on each axis; ceil(shape / stride) cells per axis.  Ordering within a
    level is z-cell, then y, then x, then template index.
    """
    shape = tuple(int(s) for s in image_shape)
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise ConfigError(f"image shape must be 3 positive ints, got {image_shape}")
    if len(level_strides) != len(base_sizes):
        raise ConfigError("level_strides and base_sizes must have equal length")
    levels = []
    for stride, base in zip(level_strides, base_sizes):
        if stride < 1:
            raise ConfigError("anchor stride must be >= 1")
        templates = anchor_templates(base, aspect_ratios)  # (T, 3)
        cells = [int(np.ceil(s / stride)) for s in shape]
        zc = (np.arange(cells[0]) + 0.5) * stride
        yc = (np.arange(cells[1]) + 0.5) * stride
        xc = (np.arange(cells[2]) + 0.5) * stride
        cz, cy, cx = np.meshgrid(zc, yc, xc, indexing="ij")
        centers = np.stack([cz, cy, cx], axis=-1).reshape(-1, 1, 3)  # (cells, 1, 3)
        ext = templates[None, :, :]  # (1, T, 3)
        lo = centers - ext / 2
        hi = centers + ext / 2
        boxes = np.concatenate([lo, hi], axis=-1).reshape(-1, 6)
        levels.append(AnchorLevel(stride=int(stride), boxes=boxes))
    return AnchorGrid(levels=tuple(levels))


def assign_targets(
    anchors: AnchorGrid | np.ndarray,
    gt: Sequence[Box3],
    pos_iou: float = 0.5,
    neg_iou: float = 0.4,
) -> Assignment:
    """Label every anchor positive (matched GT index), negative or ignore.

    An anchor is positive when its best IoU is >= pos_iou (matched to the
    argmax GT, ties to the lowest GT index), negative below neg_iou, ignore
    in between.  The best anchor of each GT is then forced positive (ties to
    the lowest anchor index), so every GT keeps at least one match — unless
    two GT boxes share the same best anchor, where the higher GT index wins
    the forced slot.
    """
    if not 0.0 <= neg_iou <= pos_iou <= 1.0:
        raise ConfigError(f"need 0 <= neg_iou <= pos_iou <= 1, got {neg_iou}, {pos_iou}")
    boxes = anchors.all_boxes if isinstance(anchors, AnchorGrid) else _boxes_array(anchors)
    n = len(boxes)
    labels = np.full(n, NEGATIVE, dtype=np.int64)
    if len(gt) == 0:
        return Assignment(labels=labels)
    overlap = pairwise_iou(boxes, _boxes_array(gt))  # (A, G)
    best = overlap.max(axis=1)
    best_gt = overlap.argmax(axis=1)  # argmax takes the first max: lowest GT index
    labels[best >= pos_iou] = best_gt[best >= pos_iou]
    labels[(best >= neg_iou) & (best < pos_iou)] = IGNORE
    for g in range(overlap.shape[1]):
        labels[int(overlap[:, g].argmax())] = g
    return Assignment(labels=labels)


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Candidates are visited by descending score (ties to the lower original
    index) and kept iff their IoU with every already-kept box stays below
    the threshold.  Output order is the kept order.
    """
    if not detections:
        return []
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    boxes = _boxes_array([d.box for d in detections])
    kept: list[int] = []
    for i in order:
        if kept and np.any(pairwise_iou(boxes[i][None], boxes[kept])[0] >= iou_threshold):
            continue
        kept.append(i)
    return [detections[i] for i in kept]


def filter_detections(
    detections: Sequence[Detection],
    min_score: float = 0.0,
    min_volume_voxels: float = 0.0,
) -> list[Detection]:
    """Order-preserving removal of low-score or undersized detections."""
    if min_score < 0 or min_volume_voxels < 0:
        raise ConfigError("filter thresholds must be >= 0")
    return [d for d in detections if d.score >= min_score and d.box.volume >= min_volume_voxels]


def save_detections(detections: Sequence[Detection], path: str | Path) -> None:
    """Write the detection-list interchange JSON."""
    rows = [
        {
            "case_id": d.case_id,
            "box": [float(v) for v in d.box.as_array()],
            "score": float(d.score),
            "label": int(d.label),
        }
        for d in detections
    ]
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def load_detections(path: str | Path) -> list[Detection]:
    """Read the detection-list interchange JSON."""
    try:
        rows = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(rows, list):
        raise InputFormatError(f"{path}: detection JSON must be a list")
    out = []
    for i, row in enumerate(rows):
        try:
            out.append(
                Detection(
                    case_id=str(row["case_id"]),
                    box=Box3.from_array(row["box"]),
                    score=float(row["score"]),
                    label=int(row.get("label", 1)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputFormatError(f"{path}: bad detection entry {i}: {exc}") from exc
    return out
