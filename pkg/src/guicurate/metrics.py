"""Evaluation metrics: grounding accuracy tables, binary-judge quality, and
element-selection accuracy.

The grounding report uses the standard six-cell layout (mobile/desktop/web
crossed with text/icon). Micro accuracy pools every example; macro is the
unweighted mean over non-empty cells. Undefined ratios are reported as 0.0
and flagged, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import InputError
from .geometry import BBox, Point, center_hit, point_in_box
from .records import ELEM_TYPES, PLATFORMS, GroundingRecord

LABELS = ("positive", "negative")


@dataclass(frozen=True)
class CellKey:
    platform: str
    elem_type: str

    def __post_init__(self) -> None:
        if self.platform not in PLATFORMS:
            raise InputError(f"unknown platform {self.platform!r}")
        if self.elem_type not in ELEM_TYPES:
            raise InputError(f"unknown elem_type {self.elem_type!r}")


ALL_CELLS = tuple(
    CellKey(platform, elem_type) for platform in PLATFORMS for elem_type in ELEM_TYPES
)


@dataclass
class CellStats:
    hits: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0


@dataclass
class GroundingReport:
    cells: dict[CellKey, CellStats]
    micro: float
    macro: float
    hits: int
    total: int
    missing: tuple[str, ...]
    empty_cells: tuple[CellKey, ...]

    def table(self) -> str:
        header = (
            f"{'cell':<16}{'hits':>8}{'total':>8}{'acc%':>8}\n"
        )
        lines = [header]
        for key in ALL_CELLS:
            stats = self.cells[key]
            label = f"{key.platform}/{key.elem_type}"
            acc = f"{100.0 * stats.accuracy:.1f}" if stats.total else "-"
            lines.append(f"{label:<16}{stats.hits:>8}{stats.total:>8}{acc:>8}\n")
        lines.append(f"{'micro':<16}{self.hits:>8}{self.total:>8}"
                     f"{100.0 * self.micro:>8.1f}\n")
        lines.append(f"{'macro':<16}{'':>8}{'':>8}{100.0 * self.macro:>8.1f}\n")
        if self.missing:
            lines.append(f"missing predictions: {len(self.missing)}\n")
        return "".join(lines)


def macro_average(values: Iterable[float]) -> float:
    """Unweighted mean. Errors on an empty input rather than inventing 0."""
    values = list(values)
    if not values:
        raise InputError("macro average of an empty sequence")
    return sum(values) / len(values)


def grounding_report(predictions: Mapping[str, BBox | Point | None],
                     gold: Sequence[GroundingRecord]) -> GroundingReport:
    """Score predictions (boxes or points, keyed by record id) against gold
    records. A box hits when its center is inside the ground truth; a point
    hits when it is inside. Records without a prediction count as misses and
    are flagged. Every gold record must carry an elem_type."""
    if not gold:
        raise InputError("grounding report needs at least one gold record")
    cells = {key: CellStats() for key in ALL_CELLS}
    missing: list[str] = []
    hits = 0
    for rec in gold:
        if rec.elem_type is None:
            raise InputError(f"record {rec.id}: elem_type required for the report")
        key = CellKey(rec.platform, rec.elem_type)
        pred = predictions.get(rec.id)
        if pred is None:
            missing.append(rec.id)
            hit = False
        elif isinstance(pred, BBox):
            hit = center_hit(pred, rec.gt_box)
        elif isinstance(pred, Point):
            hit = point_in_box(pred, rec.gt_box)
        else:
            raise InputError(f"record {rec.id}: prediction must be a box or point")
        cells[key].total += 1
        if hit:
            cells[key].hits += 1
            hits += 1
    total = len(gold)
    non_empty = [cells[key].accuracy for key in ALL_CELLS if cells[key].total]
    return GroundingReport(
        cells=cells,
        micro=hits / total,
        macro=macro_average(non_empty),
        hits=hits,
        total=total,
        missing=tuple(missing),
        empty_cells=tuple(key for key in ALL_CELLS if not cells[key].total),
    )


@dataclass(frozen=True)
class ClassificationReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision_pos: float
    recall_pos: float
    f1_pos: float
    precision_neg: float
    recall_neg: float
    f1_neg: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    undefined: tuple[str, ...]


def classification_report(labels: Sequence[str],
                          predictions: Sequence[str]) -> ClassificationReport:
    """Binary positive/negative metrics from parallel label/prediction lists."""
    if len(labels) != len(predictions):
        raise InputError(
            f"length mismatch: {len(labels)} labels vs {len(predictions)} predictions"
        )
    if not labels:
        raise InputError("classification report needs at least one pair")
    for value in (*labels, *predictions):
        if value not in LABELS:
            raise InputError(f"labels must be 'positive'/'negative', got {value!r}")
    tp = fp = fn = tn = 0
    for gold, pred in zip(labels, predictions):
        if gold == "positive" and pred == "positive":
            tp += 1
        elif gold == "negative" and pred == "positive":
            fp += 1
        elif gold == "positive" and pred == "negative":
            fn += 1
        else:
            tn += 1
    undefined: list[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision_pos = ratio(tp, tp + fp, "precision_pos")
    recall_pos = ratio(tp, tp + fn, "recall_pos")
    precision_neg = ratio(tn, tn + fn, "precision_neg")
    recall_neg = ratio(tn, tn + fp, "recall_neg")

    def f1(precision: float, recall: float, name: str) -> float:
        if precision + recall == 0.0:
            undefined.append(name)
            return 0.0
        return 2.0 * precision * recall / (precision + recall)

    f1_pos = f1(precision_pos, recall_pos, "f1_pos")
    f1_neg = f1(precision_neg, recall_neg, "f1_neg")
    total = tp + fp + fn + tn
    return ClassificationReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        accuracy=(tp + tn) / total,
        precision_pos=precision_pos, recall_pos=recall_pos, f1_pos=f1_pos,
        precision_neg=precision_neg, recall_neg=recall_neg, f1_neg=f1_neg,
        macro_precision=(precision_pos + precision_neg) / 2.0,
        macro_recall=(recall_pos + recall_neg) / 2.0,
        macro_f1=(f1_pos + f1_neg) / 2.0,
        undefined=tuple(undefined),
    )


@dataclass(frozen=True)
class ElementAccuracy:
    value: float
    hits: int
    total: int
    missing: tuple[str, ...]


def element_accuracy(pred_points: Mapping[str, Point | None],
                     gold_boxes: Mapping[str, BBox]) -> ElementAccuracy:
    """Fraction of gold elements whose predicted point lands inside the gold
    box. Missing or None predictions count as misses and are flagged."""
    if not gold_boxes:
        raise InputError("element accuracy needs at least one gold box")
    hits = 0
    missing: list[str] = []
    for key in sorted(gold_boxes):
        point = pred_points.get(key)
        if point is None:
            missing.append(key)
            continue
        if point_in_box(point, gold_boxes[key]):
            hits += 1
    total = len(gold_boxes)
    return ElementAccuracy(
        value=hits / total, hits=hits, total=total, missing=tuple(missing)
    )
