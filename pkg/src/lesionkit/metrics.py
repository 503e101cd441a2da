"""Detection scoring: greedy matching, average precision, FROC and the
five-column comparison report.

Matching is greedy by descending detection score (Hungarian assignment is
out of scope): each detection claims the highest-overlap unmatched ground
truth box at or above the IoU threshold, otherwise it is a false positive.
AP sweeps score cutoffs at every distinct score and integrates the
precision envelope (all-point interpolation).  FROC averages sensitivity
at fixed false-positives-per-case operating points; at each point the
lowest score cutoff whose FP rate still fits is used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .geometry import Box3, Detection, pairwise_iou

DEFAULT_FPPI_POINTS = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)

# One evaluation case: its detections and its ground-truth boxes.
Case = tuple[Sequence[Detection], Sequence[Box3]]


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    matches: tuple[tuple[int, int, float], ...]  # (detection index, gt index, iou)
    fp_indices: tuple[int, ...]
    fn_count: int


@dataclass(frozen=True)
class MetricsReport:
    froc_at_01: float
    froc_at_05: float
    ap_at_01: float
    ap_at_05: float
    map_01_05: float
    ap_curve: dict[float, float]
    froc_sensitivities: dict[float, dict[float, float]]  # iou -> fppi point -> sensitivity
    n_cases: int
    n_gt: int
    n_detections: int

    def __post_init__(self):
        cols = (self.froc_at_01, self.froc_at_05, self.ap_at_01, self.ap_at_05, self.map_01_05)
        if any(not 0.0 <= v <= 1.0 for v in cols):
            raise ConfigError(f"metric columns must lie in [0, 1], got {cols}")

    def columns(self) -> tuple[float, float, float, float, float]:
        return (self.froc_at_01, self.froc_at_05, self.ap_at_01, self.ap_at_05, self.map_01_05)

    def to_dict(self) -> dict:
        return {
            "froc_at_01": self.froc_at_01,
            "froc_at_05": self.froc_at_05,
            "ap_at_01": self.ap_at_01,
            "ap_at_05": self.ap_at_05,
            "map_01_05": self.map_01_05,
            "ap_curve": {f"{k:g}": v for k, v in self.ap_curve.items()},
            "froc_sensitivities": {
                f"{iou:g}": {f"{p:g}": s for p, s in pts.items()}
                for iou, pts in self.froc_sensitivities.items()
            },
            "n_cases": self.n_cases,
            "n_gt": self.n_gt,
            "n_detections": self.n_detections,
        }


def match_case(
    detections: Sequence[Detection],
    gt_boxes: Sequence[Box3],
    iou_threshold: float,
    case_id: str = "case",
) -> CaseResult:
    """Greedy per-case matching at one IoU threshold.

    Detections are visited by descending score (ties to the lower index);
    each claims the unmatched GT with the highest IoU >= threshold, ties to
    the lowest GT index.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    taken = np.zeros(len(gt_boxes), dtype=bool)
    overlap = (
        pairwise_iou([d.box for d in detections], list(gt_boxes))
        if detections and gt_boxes
        else np.zeros((len(detections), len(gt_boxes)))
    )
    matches = []
    fps = []
    for i in order:
        candidates = np.where(~taken, overlap[i], -1.0) if len(gt_boxes) else np.empty(0)
        if candidates.size and candidates.max() >= iou_threshold:
            g = int(candidates.argmax())
            taken[g] = True
            matches.append((i, g, float(overlap[i, g])))
        else:
            fps.append(i)
    return CaseResult(
        case_id=case_id,
        matches=tuple(matches),
        fp_indices=tuple(fps),
        fn_count=int(len(gt_boxes) - len(matches)),
    )


def _pooled_flags(cases: Mapping[str, Case], iou_threshold: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Pool detections of all cases into (scores, is_tp) sorted by
    descending score (ties keep case-then-detection order), plus total GT."""
    scores = []
    flags = []
    total_gt = 0
    for case_id, (dets, gts) in cases.items():
        total_gt += len(gts)
        result = match_case(dets, gts, iou_threshold, case_id)
        matched = {i for i, _, _ in result.matches}
        for i, det in enumerate(dets):
            scores.append(det.score)
            flags.append(i in matched)
    scores_arr = np.asarray(scores, dtype=np.float64)
    flags_arr = np.asarray(flags, dtype=bool)
    order = np.argsort(-scores_arr, kind="stable")
    return scores_arr[order], flags_arr[order], total_gt


def _threshold_points(scores: np.ndarray, flags: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (tp, fp, kept) at each distinct score cutoff, highest first."""
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # The cutoff at a score keeps all detections tied with it.
    is_boundary = np.ones(len(scores), dtype=bool)
    is_boundary[:-1] = scores[:-1] != scores[1:]
    idx = np.flatnonzero(is_boundary)
    return tp[idx], fp[idx], idx + 1


def average_precision(cases: Mapping[str, Case], iou_threshold: float) -> float:
    """Area under the precision-recall curve with all-point interpolation."""
    scores, flags, total_gt = _pooled_flags(cases, iou_threshold)
    if total_gt == 0:
        raise ConfigError("average precision needs at least one ground-truth box")
    if len(scores) == 0:
        return 0.0
    tp, fp, kept = _threshold_points(scores, flags)
    precision = tp / kept
    recall = tp / total_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def froc(
    cases: Mapping[str, Case],
    iou_threshold: float,
    fppi_points: Sequence[float] = DEFAULT_FPPI_POINTS,
) -> float:
    """Mean sensitivity over the false-positives-per-case operating points."""
    if len(cases) == 0:
        raise ConfigError("froc needs at least one case")
    if len(fppi_points) == 0:
        raise ConfigError("froc needs at least one operating point")
    scores, flags, total_gt = _pooled_flags(cases, iou_threshold)
    if total_gt == 0:
        raise ConfigError("froc needs at least one ground-truth box")
    if len(scores) == 0:
        return 0.0
    tp, fp, _ = _threshold_points(scores, flags)
    sensitivity = tp / total_gt
    fppi = fp / len(cases)
    out = []
    for point in fppi_points:
        feasible = fppi <= point
        out.append(float(sensitivity[feasible].max()) if feasible.any() else 0.0)
    return float(np.mean(out))


def froc_sensitivities(
    cases: Mapping[str, Case],
    iou_threshold: float,
    fppi_points: Sequence[float] = DEFAULT_FPPI_POINTS,
) -> dict[float, float]:
    """Per-operating-point sensitivities backing the FROC score."""
    scores, flags, total_gt = _pooled_flags(cases, iou_threshold)
    if total_gt == 0:
        raise ConfigError("froc needs at least one ground-truth box")
    result = {}
    if len(scores) == 0:
        return {float(p): 0.0 for p in fppi_points}
    tp, fp, _ = _threshold_points(scores, flags)
    sensitivity = tp / total_gt
    fppi = fp / len(cases)
    for point in fppi_points:
        feasible = fppi <= point
        result[float(point)] = float(sensitivity[feasible].max()) if feasible.any() else 0.0
    return result


def map_range(
    cases: Mapping[str, Case],
    thr_lo: float = 0.1,
    thr_hi: float = 0.5,
    step: float = 0.05,
) -> float:
    """Mean AP over the inclusive IoU-threshold grid."""
    grid = iou_grid(thr_lo, thr_hi, step)
    return float(np.mean([average_precision(cases, float(t)) for t in grid]))


def iou_grid(thr_lo: float = 0.1, thr_hi: float = 0.5, step: float = 0.05) -> np.ndarray:
    if step <= 0 or thr_hi < thr_lo:
        raise ConfigError("need step > 0 and thr_hi >= thr_lo")
    n = int(round((thr_hi - thr_lo) / step)) + 1
    # Rounded thresholds survive a JSON round trip unchanged.
    return np.round(np.linspace(thr_lo, thr_hi, n), 9)


def group_by_case(detections: Sequence[Detection], case_ids: Sequence[str]) -> dict[str, list[Detection]]:
    grouped: dict[str, list[Detection]] = {cid: [] for cid in case_ids}
    for det in detections:
        if det.case_id not in grouped:
            raise ConfigError(f"prediction references unknown case id {det.case_id!r}")
        grouped[det.case_id].append(det)
    return grouped


def build_report(
    predictions: Sequence[Detection],
    ground_truth: Mapping[str, Sequence[Box3]],
    fppi_points: Sequence[float] = DEFAULT_FPPI_POINTS,
    map_step: float = 0.05,
    extra_ious: Sequence[float] = (),
) -> MetricsReport:
    """Score predictions against per-case GT boxes and assemble the
    five-column report.  The GT mapping defines the case set; a prediction
    with an unknown case id is an error."""
    grouped = group_by_case(predictions, tuple(ground_truth))
    cases: dict[str, Case] = {cid: (grouped[cid], tuple(ground_truth[cid])) for cid in ground_truth}
    grid = [float(t) for t in iou_grid(0.1, 0.5, map_step)]
    for extra in extra_ious:
        if float(extra) not in grid:
            grid.append(float(extra))
    ap_curve = {t: average_precision(cases, t) for t in grid}
    map_value = float(np.mean([ap_curve[float(t)] for t in iou_grid(0.1, 0.5, map_step)]))
    return MetricsReport(
        froc_at_01=froc(cases, 0.1, fppi_points),
        froc_at_05=froc(cases, 0.5, fppi_points),
        ap_at_01=ap_curve[0.1],
        ap_at_05=ap_curve[0.5],
        map_01_05=map_value,
        ap_curve=ap_curve,
        froc_sensitivities={
            0.1: froc_sensitivities(cases, 0.1, fppi_points),
            0.5: froc_sensitivities(cases, 0.5, fppi_points),
        },
        n_cases=len(cases),
        n_gt=sum(len(g) for g in ground_truth.values()),
        n_detections=len(predictions),
    )


_HEADER = "| Experiment | FROC@0.1 | FROC@0.5 | AP@0.1 | AP@0.5 | mAP@0.1–0.5 |"
_RULE = "| --- | --- | --- | --- | --- | --- |"


def report_markdown(named_reports: Sequence[tuple[str, MetricsReport]]) -> str:
    """Markdown comparison table, one row per named run."""
    lines = [_HEADER, _RULE]
    for name, report in named_reports:
        cells = " | ".join(f"{v:.3f}" for v in report.columns())
        lines.append(f"| {name} | {cells} |")
    return "\n".join(lines) + "\n"


def save_report(report: MetricsReport, json_path: str | Path, name: str = "run") -> None:
    json_path = Path(json_path)
    json_path.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    json_path.with_suffix(".md").write_text(report_markdown([(name, report)]))


def load_report(path: str | Path) -> MetricsReport:
    data = json.loads(Path(path).read_text())
    return MetricsReport(
        froc_at_01=data["froc_at_01"],
        froc_at_05=data["froc_at_05"],
        ap_at_01=data["ap_at_01"],
        ap_at_05=data["ap_at_05"],
        map_01_05=data["map_01_05"],
        ap_curve={float(k): v for k, v in data["ap_curve"].items()},
        froc_sensitivities={
            float(k): {float(p): s for p, s in pts.items()}
            for k, pts in data["froc_sensitivities"].items()
        },
        n_cases=data["n_cases"],
        n_gt=data["n_gt"],
        n_detections=data["n_detections"],
    )
