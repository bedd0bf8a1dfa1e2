"""Dataset-level evaluation: rank accuracy against MOS-ranked ground truth
and IoU/BDE against box ground truth, with report emission."""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .datasets import ScoredCrop, SchemaError, read_jsonl
from .geometry import DEFAULT_EQUIVALENCE_EPSILON, ImageDims, PixelBox, bde, equivalent, iou


class WrongGroundTruthKindError(ValueError):
    pass


class NotEnoughGroundTruthError(ValueError):
    pass


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RankedGroundTruth:
    crops: tuple[ScoredCrop, ...]

    def __post_init__(self) -> None:
        if not self.crops:
            raise ValueError("ranked ground truth needs at least one crop")

    def top_n(self, n: int) -> list[ScoredCrop]:
        """Highest-MOS crops; boundary ties broken by lexicographic box order."""
        if len(self.crops) < n:
            raise NotEnoughGroundTruthError(f"need {n} ground-truth crops, have {len(self.crops)}")
        return sorted(self.crops, key=lambda c: (-c.mos, c.box))[:n]


@dataclass(frozen=True)
class BoxGroundTruth:
    boxes: tuple[PixelBox, ...]

    def __post_init__(self) -> None:
        if not self.boxes:
            raise ValueError("box ground truth needs at least one box")


GroundTruth = Union[RankedGroundTruth, BoxGroundTruth]


@dataclass(frozen=True)
class EvalRecord:
    image: str
    dims: ImageDims
    predictions: tuple[PixelBox, ...]
    ground_truth: GroundTruth

    def __post_init__(self) -> None:
        if not self.predictions:
            raise ValueError(f"{self.image}: record needs at least one prediction")


def acc_k_n(
    record: EvalRecord, k: int, n: int, epsilon: float = DEFAULT_EQUIVALENCE_EPSILON
) -> bool:
    """True iff any of the top-k predictions is equivalent (IoU strictly
    above epsilon) to any of the n highest-MOS ground-truth crops."""
    if not isinstance(record.ground_truth, RankedGroundTruth):
        raise WrongGroundTruthKindError(f"{record.image}: rank accuracy needs MOS-ranked ground truth")
    top_gt = record.ground_truth.top_n(n)
    top_pred = record.predictions[:k]
    return any(equivalent(p, g.box, epsilon) for p in top_pred for g in top_gt)


def eval_box_gt(record: EvalRecord) -> tuple[float, float]:
    """Rank-1 prediction against box ground truth: max IoU and min BDE over
    the ground-truth boxes (multi-box convention)."""
    if not isinstance(record.ground_truth, BoxGroundTruth):
        raise WrongGroundTruthKindError(f"{record.image}: IoU/BDE need box ground truth")
    pred = record.predictions[0]
    boxes = record.ground_truth.boxes
    return (
        max(iou(pred, g) for g in boxes),
        min(bde(pred, g, record.dims) for g in boxes),
    )


@dataclass(frozen=True)
class Report:
    acc_1_5: Optional[float]
    acc_1_10: Optional[float]
    mean_iou: Optional[float]
    mean_bde: Optional[float]
    ranked_count: int
    box_count: int
    rows: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "acc_1_5": self.acc_1_5,
            "acc_1_10": self.acc_1_10,
            "mean_iou": self.mean_iou,
            "mean_bde": self.mean_bde,
            "ranked_count": self.ranked_count,
            "box_count": self.box_count,
            "rows": list(self.rows),
        }


def aggregate(
    records: list[EvalRecord], epsilon: float = DEFAULT_EQUIVALENCE_EPSILON
) -> Report:
    """Percentages over rank-annotated records, means over box-annotated
    records; per-image rows are preserved for audit."""
    if not records:
        raise EmptyEvaluationError("no evaluation records")
    rows = []
    acc5_hits: list[bool] = []
    acc10_hits: list[bool] = []
    ious: list[float] = []
    bdes: list[float] = []
    for record in records:
        row: dict = {"image": record.image}
        if isinstance(record.ground_truth, RankedGroundTruth):
            hit5 = acc_k_n(record, 1, 5, epsilon)
            hit10 = acc_k_n(record, 1, 10, epsilon)
            acc5_hits.append(hit5)
            acc10_hits.append(hit10)
            row.update({"kind": "ranked", "acc_1_5": hit5, "acc_1_10": hit10})
        else:
            v_iou, v_bde = eval_box_gt(record)
            ious.append(v_iou)
            bdes.append(v_bde)
            row.update({"kind": "boxes", "iou": v_iou, "bde": v_bde})
        rows.append(row)
    return Report(
        acc_1_5=100.0 * sum(acc5_hits) / len(acc5_hits) if acc5_hits else None,
        acc_1_10=100.0 * sum(acc10_hits) / len(acc10_hits) if acc10_hits else None,
        mean_iou=sum(ious) / len(ious) if ious else None,
        mean_bde=sum(bdes) / len(bdes) if bdes else None,
        ranked_count=len(acc5_hits),
        box_count=len(ious),
        rows=tuple(rows),
    )


REPORT_COLUMNS = ["ACC_1/5(↑)", "ACC_1/10(↑)", "IoU(↑)", "BDE(↓)"]


def emit_report(report: Report, fmt: str = "json") -> bytes:
    """Serialize a report as json, csv, or a fixed-width text table."""
    if fmt == "json":
        return (json.dumps(report.to_dict(), indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value", "count"])
        writer.writerow(["acc_1_5", _cell(report.acc_1_5), report.ranked_count])
        writer.writerow(["acc_1_10", _cell(report.acc_1_10), report.ranked_count])
        writer.writerow(["mean_iou", _cell(report.mean_iou), report.box_count])
        writer.writerow(["mean_bde", _cell(report.mean_bde), report.box_count])
        return buf.getvalue().encode("utf-8")
    if fmt == "text":
        values = [
            _fixed(report.acc_1_5, "{:.1f}"),
            _fixed(report.acc_1_10, "{:.1f}"),
            _fixed(report.mean_iou, "{:.3f}"),
            _fixed(report.mean_bde, "{:.3f}"),
        ]
        width = 12
        header = "".join(c.rjust(width) for c in REPORT_COLUMNS)
        line = "".join(v.rjust(width) for v in values)
        footer = f"ranked images: {report.ranked_count}   box images: {report.box_count}"
        return ("\n".join([header, "-" * len(header), line, footer]) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def _fixed(value: Optional[float], spec: str) -> str:
    return "-" if value is None else spec.format(value)


# ---------------------------------------------------------------------------
# JSONL adapters


def load_eval_records(predictions_path: str | Path, gt_path: str | Path) -> list[EvalRecord]:
    """Join predictions {image, boxes} with ground truth by image id.

    Ground-truth rows carry either {crops: [{box, mos}]} (MOS-ranked) or
    {boxes: [[...]]} (box ground truth), plus width/height.
    """
    preds: dict[str, list[PixelBox]] = {}
    for lineno, record in enumerate(read_jsonl(predictions_path), start=1):
        try:
            preds[str(record["image"])] = [PixelBox.from_list(b) for b in record["boxes"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"predictions: {exc}", line=lineno) from None

    records = []
    for lineno, record in enumerate(read_jsonl(gt_path), start=1):
        try:
            image = str(record["image"])
            dims = ImageDims(int(record["width"]), int(record["height"]))
            if "crops" in record:
                gt: GroundTruth = RankedGroundTruth(
                    tuple(
                        ScoredCrop(box=PixelBox.from_list(c["box"]), mos=float(c["mos"]))
                        for c in record["crops"]
                    )
                )
            elif "boxes" in record:
                gt = BoxGroundTruth(tuple(PixelBox.from_list(b) for b in record["boxes"]))
            else:
                raise ValueError("ground-truth row needs 'crops' or 'boxes'")
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"ground truth: {exc}", line=lineno) from None
        if image not in preds:
            raise SchemaError(f"no predictions for image {image!r}", line=lineno)
        records.append(
            EvalRecord(
                image=image, dims=dims, predictions=tuple(preds[image]), ground_truth=gt
            )
        )
    return records
