"""Metric tests: greedy matching, AP and FROC against exhaustive
threshold-sweep re-implementations that redo the matching at every cutoff."""

import numpy as np
import pytest

from lesionkit.errors import ConfigError
from lesionkit.geometry import Box3, Detection
from lesionkit.metrics import (
    average_precision,
    build_report,
    froc,
    iou_grid,
    load_report,
    map_range,
    match_case,
    report_markdown,
    save_report,
)

from conftest import random_int_box


def _oracle_iou(a: Box3, b: Box3) -> float:
    inter = 1.0
    for ax in range(3):
        inter *= max(0.0, min(a.max[ax], b.max[ax]) - max(a.min[ax], b.min[ax]))
    return inter / (a.volume + b.volume - inter)


def _greedy_match_count(dets, gts, thr):
    """Number of matches under the greedy rule, recomputed from scratch."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    taken = [False] * len(gts)
    matches = 0
    for i in order:
        best, best_g = -1.0, -1
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            v = _oracle_iou(dets[i].box, gt)
            if v > best:
                best, best_g = v, g
        if best_g >= 0 and best >= thr:
            taken[best_g] = True
            matches += 1
    return matches


def _ap_oracle(cases, thr):
    """Enumerate every score cutoff, re-running the matcher each time, and
    integrate the precision envelope over recall."""
    scores = sorted({d.score for dets, _ in cases.values() for d in dets}, reverse=True)
    total_gt = sum(len(g) for _, g in cases.values())
    points = []
    for cutoff in scores:
        tp = kept = 0
        for dets, gts in cases.values():
            sub = [d for d in dets if d.score >= cutoff]
            kept += len(sub)
            tp += _greedy_match_count(sub, gts, thr)
        points.append((tp / total_gt, tp / kept))
    area = 0.0
    prev_recall = 0.0
    for i, (recall, _) in enumerate(points):
        envelope = max(p for _, p in points[i:])
        area += (recall - prev_recall) * envelope
        prev_recall = recall
    return area


def _froc_oracle(cases, thr, fppi_points):
    scores = sorted({d.score for dets, _ in cases.values() for d in dets}, reverse=True)
    total_gt = sum(len(g) for _, g in cases.values())
    operating = [(0.0, 0.0)]  # (fppi, sensitivity) at an infinite cutoff
    for cutoff in scores:
        tp = kept = 0
        for dets, gts in cases.values():
            sub = [d for d in dets if d.score >= cutoff]
            kept += len(sub)
            tp += _greedy_match_count(sub, gts, thr)
        operating.append(((kept - tp) / len(cases), tp / total_gt))
    sens = []
    for point in fppi_points:
        feasible = [s for f, s in operating if f <= point]
        sens.append(max(feasible) if feasible else 0.0)
    return float(np.mean(sens))


def _random_cases(rng, n_cases=3, max_dets=8, max_gts=4):
    cases = {}
    for c in range(n_cases):
        gts = [random_int_box(rng, 0, 8, 5) for _ in range(int(rng.integers(1, max_gts + 1)))]
        dets = [
            Detection(case_id=f"case{c}", box=random_int_box(rng, 0, 8, 5),
                      score=float(rng.uniform()), label=1)
            for _ in range(int(rng.integers(0, max_dets + 1)))
        ]
        cases[f"case{c}"] = (dets, gts)
    return cases


def _perfect_cases(rng, n_cases=2, n_gts=3):
    cases = {}
    for c in range(n_cases):
        gts = []
        for g in range(n_gts):
            lo = np.array([g * 10, 0, 0], dtype=float)
            gts.append(Box3(min=tuple(lo), max=tuple(lo + rng.integers(1, 4, size=3))))
        dets = [
            Detection(case_id=f"case{c}", box=b, score=float(rng.uniform(0.5, 1.0)), label=1)
            for b in gts
        ]
        cases[f"case{c}"] = (dets, gts)
    return cases


class TestMatchCase:
    def test_exact_predictions(self, rng):
        gts = [random_int_box(rng, 0, 10, 4) for _ in range(3)]
        dets = [Detection(case_id="c", box=b, score=0.9, label=1) for b in gts]
        result = match_case(dets, gts, 0.5)
        assert result.fp_indices == ()
        assert result.fn_count == 0
        assert len(result.matches) == 3

    def test_no_detections(self, rng):
        gts = [random_int_box(rng) for _ in range(3)]
        result = match_case([], gts, 0.5)
        assert result.fn_count == 3
        assert result.matches == ()

    def test_crafted_overlap_case(self):
        """Three detections fight over two GTs; the score order decides."""
        gt_a = Box3(min=(0, 0, 0), max=(4, 4, 4))
        gt_b = Box3(min=(10, 0, 0), max=(14, 4, 4))
        d_high = Detection(case_id="c", box=Box3(min=(0, 0, 0), max=(4, 4, 3)), score=0.9)
        d_mid = Detection(case_id="c", box=Box3(min=(0, 0, 1), max=(4, 4, 4)), score=0.8)
        d_low = Detection(case_id="c", box=Box3(min=(10, 0, 0), max=(14, 4, 4)), score=0.2)
        result = match_case([d_mid, d_high, d_low], [gt_a, gt_b], 0.3)
        assert dict((d, g) for d, g, _ in result.matches) == {1: 0, 2: 1}
        assert result.fp_indices == (0,)

    def test_matches_oracle_on_random_instances(self, rng):
        for _ in range(30):
            cases = _random_cases(rng, n_cases=1)
            dets, gts = next(iter(cases.values()))
            got = match_case(dets, gts, 0.25)
            assert len(got.matches) == _greedy_match_count(dets, gts, 0.25)

    def test_tp_bounds(self, rng):
        for _ in range(20):
            cases = _random_cases(rng, n_cases=1)
            dets, gts = next(iter(cases.values()))
            result = match_case(dets, gts, 0.3)
            assert len(result.matches) <= min(len(dets), len(gts))
            assert len(result.matches) + result.fn_count == len(gts)


class TestAveragePrecision:
    def test_single_perfect_detection(self, rng):
        gt = random_int_box(rng)
        cases = {"c": ([Detection(case_id="c", box=gt, score=0.8)], [gt])}
        assert average_precision(cases, 0.5) == 1.0

    def test_single_miss(self):
        gt = Box3(min=(0, 0, 0), max=(2, 2, 2))
        far = Box3(min=(10, 10, 10), max=(12, 12, 12))
        cases = {"c": ([Detection(case_id="c", box=far, score=0.8)], [gt])}
        assert average_precision(cases, 0.1) == 0.0

    def test_no_detections(self, rng):
        cases = {"c": ([], [random_int_box(rng)])}
        assert average_precision(cases, 0.5) == 0.0

    def test_matches_threshold_enumeration_oracle(self, rng):
        for _ in range(25):
            cases = _random_cases(rng)
            for thr in (0.1, 0.3, 0.5):
                assert average_precision(cases, thr) == pytest.approx(_ap_oracle(cases, thr), abs=1e-9)

    def test_invariant_under_monotone_score_transform(self, rng):
        cases = _random_cases(rng)
        transformed = {
            cid: ([Detection(d.case_id, d.box, float(np.exp(3 * d.score)), d.label) for d in dets], gts)
            for cid, (dets, gts) in cases.items()
        }
        for thr in (0.1, 0.5):
            assert average_precision(cases, thr) == pytest.approx(average_precision(transformed, thr), abs=1e-12)

    def test_non_increasing_in_iou_threshold(self, rng):
        for _ in range(10):
            cases = _random_cases(rng)
            values = [average_precision(cases, float(t)) for t in iou_grid(0.05, 0.9, 0.05)]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_zero_gt_rejected(self):
        with pytest.raises(ConfigError):
            average_precision({"c": ([], [])}, 0.5)


class TestFroc:
    def test_perfect_detector(self, rng):
        assert froc(_perfect_cases(rng), 0.5) == 1.0

    def test_empty_detections(self, rng):
        cases = {"c": ([], [random_int_box(rng)])}
        assert froc(cases, 0.5) == 0.0

    def test_matches_sweep_oracle(self, rng):
        points = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
        for _ in range(25):
            cases = _random_cases(rng)
            for thr in (0.1, 0.5):
                assert froc(cases, thr, points) == pytest.approx(_froc_oracle(cases, thr, points), abs=1e-9)

    def test_infinite_point_equals_recall_at_zero_threshold(self, rng):
        for _ in range(10):
            cases = _random_cases(rng)
            total_gt = sum(len(g) for _, g in cases.values())
            tp = sum(_greedy_match_count(dets, gts, 0.3) for dets, gts in cases.values())
            assert froc(cases, 0.3, fppi_points=(np.inf,)) == pytest.approx(tp / total_gt, abs=1e-12)

    def test_non_increasing_in_iou_threshold(self, rng):
        for _ in range(10):
            cases = _random_cases(rng)
            values = [froc(cases, float(t)) for t in iou_grid(0.05, 0.9, 0.05)]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


class TestMapRange:
    def test_perfect_detector_everywhere(self, rng):
        assert map_range(_perfect_cases(rng)) == 1.0

    def test_constant_ap_gives_that_constant(self, rng):
        """A detector perfect at IoU 0.1 through 0.5 has mAP = AP."""
        cases = _perfect_cases(rng)
        ap = average_precision(cases, 0.3)
        assert map_range(cases) == pytest.approx(ap, abs=1e-12)

    def test_single_band_detector_gives_one_ninth(self):
        """IoU exactly 1/8 matches at 0.1 but at no grid point >= 0.15."""
        gt = Box3(min=(0, 0, 0), max=(1, 1, 1))
        det_box = Box3(min=(0, 0, 0), max=(2, 2, 2))  # IoU = 1/8
        cases = {"c": ([Detection(case_id="c", box=det_box, score=0.9)], [gt])}
        assert average_precision(cases, 0.1) == 1.0
        assert average_precision(cases, 0.15) == 0.0
        assert map_range(cases) == pytest.approx(1 / 9, abs=1e-12)

    def test_grid_is_inclusive(self):
        np.testing.assert_allclose(iou_grid(0.1, 0.5, 0.05), np.arange(2, 11) / 20.0, atol=1e-12)


class TestBuildReport:
    def test_perfect_predictions_give_all_ones(self, rng):
        cases = _perfect_cases(rng)
        preds = [d for dets, _ in cases.values() for d in dets]
        gt = {cid: gts for cid, (_, gts) in cases.items()}
        report = build_report(preds, gt)
        assert report.columns() == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_empty_predictions_give_all_zeros(self, rng):
        cases = _perfect_cases(rng)
        gt = {cid: gts for cid, (_, gts) in cases.items()}
        report = build_report([], gt)
        assert report.columns() == (0.0, 0.0, 0.0, 0.0, 0.0)

    def test_unknown_case_id_rejected(self, rng):
        gt = {"known": [random_int_box(rng)]}
        preds = [Detection(case_id="unknown", box=random_int_box(rng), score=0.5)]
        with pytest.raises(ConfigError, match="unknown"):
            build_report(preds, gt)

    def test_markdown_header_layout(self, rng):
        cases = _perfect_cases(rng)
        preds = [d for dets, _ in cases.values() for d in dets]
        gt = {cid: gts for cid, (_, gts) in cases.items()}
        text = report_markdown([("run", build_report(preds, gt))])
        lines = text.splitlines()
        assert lines[0] == "| Experiment | FROC@0.1 | FROC@0.5 | AP@0.1 | AP@0.5 | mAP@0.1–0.5 |"
        assert lines[2].startswith("| run | 1.000 | 1.000 | 1.000 | 1.000 | 1.000 |")

    def test_json_round_trip(self, rng, tmp_path):
        cases = _random_cases(rng)
        preds = [d for dets, _ in cases.values() for d in dets]
        gt = {cid: gts for cid, (_, gts) in cases.items()}
        report = build_report(preds, gt)
        save_report(report, tmp_path / "r.json")
        back = load_report(tmp_path / "r.json")
        assert back.columns() == report.columns()
        assert back.ap_curve == report.ap_curve
