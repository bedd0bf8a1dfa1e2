import csv
import io
import json
import random

import pytest

from cropkit.datasets import ScoredCrop, write_jsonl
from cropkit.evaluation import (
    BoxGroundTruth,
    EmptyEvaluationError,
    EvalRecord,
    NotEnoughGroundTruthError,
    RankedGroundTruth,
    Report,
    WrongGroundTruthKindError,
    acc_k_n,
    aggregate,
    emit_report,
    eval_box_gt,
    load_eval_records,
)
from cropkit.geometry import ImageDims, PixelBox, bde, equivalent, iou

DIMS = ImageDims(200, 200)


def box(rng: random.Random) -> PixelBox:
    x1 = rng.uniform(0, 150)
    y1 = rng.uniform(0, 150)
    return PixelBox(x1, y1, x1 + rng.uniform(20, 50), y1 + rng.uniform(20, 50))


def ranked_record(rng: random.Random, n_gt=20, n_pred=3) -> EvalRecord:
    crops = tuple(ScoredCrop(box=box(rng), mos=round(rng.uniform(1, 5), 2)) for _ in range(n_gt))
    preds = tuple(box(rng) for _ in range(n_pred))
    return EvalRecord(image=f"im{rng.random():.6f}", dims=DIMS, predictions=preds, ground_truth=RankedGroundTruth(crops))


def brute_force_acc(record: EvalRecord, k: int, n: int, epsilon: float) -> bool:
    """Exhaustive pairwise oracle over all (prediction, ground-truth) pairs."""
    ranked = sorted(record.ground_truth.crops, key=lambda c: (-c.mos, c.box))[:n]
    hits = []
    for p in record.predictions[:k]:
        for g in ranked:
            hits.append(iou(p, g.box) > epsilon)
    return any(hits)


class TestAccKN:
    def test_top1_identical_to_best(self):
        best = PixelBox(10, 10, 110, 110)
        crops = (ScoredCrop(box=best, mos=4.9),) + tuple(
            ScoredCrop(box=PixelBox(20 + i, 20, 120 + i, 120), mos=3.0 - i * 0.1) for i in range(9)
        )
        record = EvalRecord("x", DIMS, (best,), RankedGroundTruth(crops))
        assert acc_k_n(record, 1, 5)

    def test_strict_threshold_boundary(self):
        # Every prediction-GT IoU is exactly 0.84 < epsilon.
        gt_box = PixelBox(0, 0, 100, 100)
        pred = PixelBox(0, 0, 100, 84)
        crops = tuple(ScoredCrop(box=gt_box, mos=4.0 - 0.1 * i) for i in range(10))
        record = EvalRecord("x", DIMS, (pred,), RankedGroundTruth(crops))
        assert iou(pred, gt_box) == 0.84
        assert not acc_k_n(record, 1, 10, 0.85)

    def test_matches_brute_force(self):
        rng = random.Random(55)
        for _ in range(50):
            record = ranked_record(rng)
            for k, n in [(1, 5), (1, 10)]:
                assert acc_k_n(record, k, n) == brute_force_acc(record, k, n, 0.85)

    def test_monotone_in_k_and_n(self):
        rng = random.Random(56)
        for _ in range(30):
            record = ranked_record(rng, n_gt=20, n_pred=5)
            for k in (1, 2, 3):
                for n in (5, 10, 15):
                    if acc_k_n(record, k, n):
                        assert acc_k_n(record, k + 1, n)
                        assert acc_k_n(record, k, n + 5)

    def test_wrong_kind(self):
        record = EvalRecord("x", DIMS, (PixelBox(0, 0, 10, 10),), BoxGroundTruth((PixelBox(0, 0, 10, 10),)))
        with pytest.raises(WrongGroundTruthKindError):
            acc_k_n(record, 1, 5)

    def test_not_enough_ground_truth(self):
        crops = tuple(ScoredCrop(box=PixelBox(0, 0, 10 + i, 10 + i), mos=3.0) for i in range(3))
        record = EvalRecord("x", DIMS, (PixelBox(0, 0, 10, 10),), RankedGroundTruth(crops))
        with pytest.raises(NotEnoughGroundTruthError):
            acc_k_n(record, 1, 5)

    def test_boundary_ties_lexicographic(self):
        # Five crops at mos 4.0 and the tie-break decides which enters top-5.
        tied = [ScoredCrop(box=PixelBox(i, 0, i + 10, 10), mos=4.0) for i in range(5)]
        low = ScoredCrop(box=PixelBox(100, 100, 120, 120), mos=4.0)
        record = EvalRecord(
            "x", DIMS, (PixelBox(100, 100, 120, 120),), RankedGroundTruth(tuple(tied) + (low,))
        )
        # low sorts last among the 4.0 ties (largest x1), so it is excluded.
        assert not acc_k_n(record, 1, 5)
        assert acc_k_n(record, 1, 6)


class TestEvalBoxGt:
    def test_exact_match(self):
        b = PixelBox(10, 10, 110, 110)
        record = EvalRecord("x", DIMS, (b,), BoxGroundTruth((b,)))
        assert eval_box_gt(record) == (1.0, 0.0)

    def test_multi_gt_max_min_convention(self):
        pred = PixelBox(50, 50, 150, 150)
        other = PixelBox(0, 0, 40, 40)
        record = EvalRecord("x", DIMS, (pred,), BoxGroundTruth((other, pred)))
        assert eval_box_gt(record) == (1.0, 0.0)

    def test_matches_brute_force(self):
        rng = random.Random(57)
        for _ in range(30):
            gts = tuple(box(rng) for _ in range(4))
            pred = box(rng)
            record = EvalRecord("x", DIMS, (pred,), BoxGroundTruth(gts))
            got_iou, got_bde = eval_box_gt(record)
            assert got_iou == max(iou(pred, g) for g in gts)
            assert got_bde == min(bde(pred, g, DIMS) for g in gts)

    def test_wrong_kind(self):
        crops = tuple(ScoredCrop(box=PixelBox(0, 0, 10 + i, 10 + i), mos=3.0) for i in range(10))
        record = EvalRecord("x", DIMS, (PixelBox(0, 0, 10, 10),), RankedGroundTruth(crops))
        with pytest.raises(WrongGroundTruthKindError):
            eval_box_gt(record)


class TestAggregate:
    def perfect_records(self, n_ranked=10, n_boxes=10):
        rng = random.Random(58)
        records = []
        for i in range(n_ranked):
            crops = tuple(
                ScoredCrop(box=box(rng), mos=5.0 - j * 0.2) for j in range(12)
            )
            best = sorted(crops, key=lambda c: (-c.mos, c.box))[0]
            records.append(
                EvalRecord(f"r{i}", DIMS, (best.box,), RankedGroundTruth(crops))
            )
        for i in range(n_boxes):
            b = box(rng)
            records.append(EvalRecord(f"b{i}", DIMS, (b,), BoxGroundTruth((b,))))
        return records

    def test_ground_truth_as_predictions(self):
        report = aggregate(self.perfect_records())
        assert report.acc_1_5 == 100.0
        assert report.acc_1_10 == 100.0
        assert report.mean_iou == pytest.approx(1.0, abs=1e-12)
        assert report.mean_bde == pytest.approx(0.0, abs=1e-12)

    def test_single_false_record(self):
        rng = random.Random(59)
        crops = tuple(ScoredCrop(box=PixelBox(0, 0, 100, 100), mos=4.0 - i * 0.1) for i in range(10))
        record = EvalRecord("x", DIMS, (PixelBox(100, 100, 150, 150),), RankedGroundTruth(crops))
        report = aggregate([record])
        assert report.acc_1_5 == 0.0
        assert report.mean_iou is None

    def test_permutation_invariance(self):
        records = self.perfect_records(5, 5)
        a = aggregate(records)
        b = aggregate(list(reversed(records)))
        assert (a.acc_1_5, a.acc_1_10, a.mean_iou, a.mean_bde) == (
            b.acc_1_5,
            b.acc_1_10,
            b.mean_iou,
            b.mean_bde,
        )

    def test_hand_aggregated_oracle(self):
        rng = random.Random(60)
        records = [ranked_record(rng) for _ in range(10)]
        report = aggregate(records)
        expected = 100.0 * sum(brute_force_acc(r, 1, 5, 0.85) for r in records) / 10
        assert report.acc_1_5 == pytest.approx(expected, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyEvaluationError):
            aggregate([])


class TestEmitReport:
    def report(self):
        return aggregate(TestAggregate().perfect_records(4, 4))

    def test_json_csv_value_agreement(self):
        report = self.report()
        parsed = json.loads(emit_report(report, "json"))
        rows = list(csv.reader(io.StringIO(emit_report(report, "csv").decode())))
        by_metric = {r[0]: r[1] for r in rows[1:]}
        assert float(by_metric["acc_1_5"]) == parsed["acc_1_5"]
        assert float(by_metric["mean_iou"]) == parsed["mean_iou"]
        assert float(by_metric["mean_bde"]) == parsed["mean_bde"]

    def test_empty_metrics_still_emit_headers(self):
        rng = random.Random(61)
        report = aggregate([ranked_record(rng)])
        csv_rows = list(csv.reader(io.StringIO(emit_report(report, "csv").decode())))
        assert csv_rows[0] == ["metric", "value", "count"]
        text = emit_report(report, "text").decode()
        assert "ACC_1/5" in text and "BDE" in text

    def test_golden_text_table(self):
        report = Report(
            acc_1_5=86.2,
            acc_1_10=94.8,
            mean_iou=0.871,
            mean_bde=0.027,
            ranked_count=500,
            box_count=500,
            rows=(),
        )
        expected = (
            "  ACC_1/5(↑) ACC_1/10(↑)      IoU(↑)      BDE(↓)\n"
            "------------------------------------------------\n"
            "        86.2        94.8       0.871       0.027\n"
            "ranked images: 500   box images: 500\n"
        )
        assert emit_report(report, "text").decode() == expected

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(self.report(), "yaml")


def test_load_eval_records(tmp_path):
    preds = tmp_path / "preds.jsonl"
    gt = tmp_path / "gt.jsonl"
    write_jsonl(preds, [{"image": "a", "boxes": [[0, 0, 50, 50]]}, {"image": "b", "boxes": [[5, 5, 60, 60]]}])
    write_jsonl(
        gt,
        [
            {
                "image": "a",
                "width": 200,
                "height": 200,
                "crops": [{"box": [0, 0, 50, 50], "mos": 4.0 - i * 0.1} for i in range(10)],
            },
            {"image": "b", "width": 200, "height": 200, "boxes": [[5, 5, 60, 60]]},
        ],
    )
    records = load_eval_records(preds, gt)
    assert isinstance(records[0].ground_truth, RankedGroundTruth)
    assert isinstance(records[1].ground_truth, BoxGroundTruth)
    report = aggregate(records)
    assert report.ranked_count == 1 and report.box_count == 1
