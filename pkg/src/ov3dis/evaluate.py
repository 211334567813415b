"""Instance-segmentation AP/AR over 3D point masks.

Per class and IoU threshold: predictions sorted by confidence (point count,
then id, as deterministic tie-breaks, since the pipeline emits everything at
confidence 1.0) are greedily matched to the unmatched ground-truth instance
with the highest IoU above the threshold. AP integrates the
precision-recall curve with all-point interpolation (monotone precision
envelope); AR is the final matched fraction of ground truth.

Reported bands: IoU 0.25, 0.50, and the mean over 0.50..0.95 step 0.05.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructureError

IOU_BAND = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class GroundTruthInstance:
    point_mask: np.ndarray
    class_id: int

    def __post_init__(self):
        self.point_mask = np.asarray(self.point_mask, dtype=bool)
        if not self.point_mask.any():
            raise StructureError("ground-truth instance mask is empty")


@dataclass
class EvalPrediction:
    point_mask: np.ndarray
    class_id: int
    confidence: float
    pred_id: int

    def __post_init__(self):
        self.point_mask = np.asarray(self.point_mask, dtype=bool)

    @property
    def point_count(self) -> int:
        return int(np.count_nonzero(self.point_mask))


@dataclass
class ClassMetrics:
    ap25: float
    ap50: float
    ap: float
    ar25: float
    ar50: float
    ar: float

    def as_dict(self) -> dict:
        return {
            "ap25": self.ap25, "ap50": self.ap50, "ap": self.ap,
            "ar25": self.ar25, "ar50": self.ar50, "ar": self.ar,
        }


@dataclass
class EvalReport:
    per_class: dict[int, ClassMetrics]
    means: ClassMetrics
    class_agnostic: bool
    n_ground_truth: int
    n_predictions: int

    def as_dict(self) -> dict:
        return {
            "class_agnostic": self.class_agnostic,
            "n_ground_truth": self.n_ground_truth,
            "n_predictions": self.n_predictions,
            "per_class": {str(c): m.as_dict() for c, m in sorted(self.per_class.items())},
            "means": self.means.as_dict(),
        }


def _average_precision(tp_flags: list[bool], n_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve."""
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.int64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def _match_at_threshold(iou: np.ndarray, threshold: float) -> list[bool]:
    """Greedy matching of confidence-ordered predictions (rows of ``iou``)
    to ground truth; returns per-prediction TP flags."""
    n_pred, n_gt = iou.shape
    taken = np.zeros(n_gt, dtype=bool)
    flags = []
    for p in range(n_pred):
        candidates = np.flatnonzero(~taken & (iou[p] >= threshold))
        if candidates.size == 0:
            flags.append(False)
            continue
        best = candidates[np.argmax(iou[p][candidates])]
        taken[best] = True
        flags.append(True)
    return flags


def _class_metrics(preds: list[EvalPrediction],
                   gts: list[GroundTruthInstance]) -> ClassMetrics:
    n_gt = len(gts)
    preds = sorted(preds, key=lambda p: (-p.confidence, -p.point_count, p.pred_id))
    if preds:
        gt_stack = np.stack([g.point_mask for g in gts])
        iou = np.zeros((len(preds), n_gt))
        for i, p in enumerate(preds):
            inter = np.count_nonzero(gt_stack & p.point_mask, axis=1)
            union = np.count_nonzero(gt_stack | p.point_mask, axis=1)
            valid = union > 0
            iou[i, valid] = inter[valid] / union[valid]
    else:
        iou = np.zeros((0, n_gt))

    def at(threshold: float) -> tuple[float, float]:
        flags = _match_at_threshold(iou, threshold)
        return _average_precision(flags, n_gt), float(sum(flags)) / n_gt

    ap25, ar25 = at(0.25)
    ap50, ar50 = at(0.50)
    band = [at(t) for t in IOU_BAND]
    return ClassMetrics(
        ap25=ap25, ap50=ap50, ap=float(np.mean([b[0] for b in band])),
        ar25=ar25, ar50=ar50, ar=float(np.mean([b[1] for b in band])),
    )


def evaluate(predictions: list[EvalPrediction],
             ground_truth: list[GroundTruthInstance],
             class_agnostic: bool = False,
             exclude_class_ids: set[int] | None = None) -> EvalReport:
    """Score predictions against ground truth.

    Classes listed in ``exclude_class_ids`` ("stuff") are dropped from both
    sides before scoring. Classes without ground truth do not contribute.
    """
    excluded = exclude_class_ids or set()
    gts = [g for g in ground_truth if g.class_id not in excluded]
    preds = [p for p in predictions if p.class_id not in excluded]
    sizes = {g.point_mask.shape[0] for g in gts} | {p.point_mask.shape[0] for p in preds}
    if len(sizes) > 1:
        raise StructureError(f"mask sizes differ across predictions/ground truth: {sizes}")

    if class_agnostic:
        gts = [GroundTruthInstance(g.point_mask, 0) for g in gts]
        preds = [EvalPrediction(p.point_mask, 0, p.confidence, p.pred_id) for p in preds]

    class_ids = sorted({g.class_id for g in gts})
    per_class: dict[int, ClassMetrics] = {}
    for c in class_ids:
        per_class[c] = _class_metrics(
            [p for p in preds if p.class_id == c],
            [g for g in gts if g.class_id == c],
        )

    if per_class:
        means = ClassMetrics(*[
            float(np.mean([getattr(m, name) for m in per_class.values()]))
            for name in ("ap25", "ap50", "ap", "ar25", "ar50", "ar")
        ])
    else:
        means = ClassMetrics(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return EvalReport(per_class, means, class_agnostic, len(gts), len(preds))


def group_report(report: EvalReport,
                 class_groups: dict[str, list[int]]) -> dict[str, ClassMetrics]:
    """Mean per-class metrics within named class groups (e.g. head/common/
    tail). Groups with no evaluated classes are omitted; unknown class ids
    are an error."""
    out: dict[str, ClassMetrics] = {}
    for name, ids in class_groups.items():
        for c in ids:
            if c not in report.per_class:
                raise StructureError(f"group {name!r} references unknown class {c}")
        members = [report.per_class[c] for c in ids]
        if not members:
            continue
        out[name] = ClassMetrics(*[
            float(np.mean([getattr(m, f) for m in members]))
            for f in ("ap25", "ap50", "ap", "ar25", "ar50", "ar")
        ])
    return out
