"""Evaluation protocol: masked accuracy/F1, vessel discovery, and ROC AUC.

Accuracy and F1 always derive from stored 3x3 confusion matrices over
{background, artery, vein}, restricted to a pixel mask.  The masks are:
the full image, the centerline of discovered (predicted) vessels, the
centerline restricted to major vessels, and undefined ratios surface as
NaN rather than silent zeros.  A predicted-vessel centerline pixel whose
ground truth is background counts as an error (third class), which the
report states explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import BinaryMap, LabelMap
from .skeleton import thin
from .vessel_graph import chamfer_distance

MAJOR_WIDTH_PX = 2.0            # "major vessel" width cutoff
MIN_CENTERLINE_COMPONENT = 3    # skeleton specks below this are noise

_EIGHT = np.ones((3, 3), dtype=np.uint8)


def confusion(pred: LabelMap, gt: LabelMap, mask: BinaryMap) -> np.ndarray:
    """3x3 counts over {background, artery, vein}, rows = ground truth."""
    if pred.labels.shape != gt.labels.shape or pred.labels.shape != mask.bits.shape:
        raise ValueError(
            "dimension mismatch: pred %s, gt %s, mask %s"
            % (pred.labels.shape, gt.labels.shape, mask.bits.shape)
        )
    g = gt.labels[mask.bits].astype(np.int64)
    p = pred.labels[mask.bits].astype(np.int64)
    return np.bincount(g * 3 + p, minlength=9).reshape(3, 3)


def accuracy_from(matrix: np.ndarray) -> float:
    total = matrix.sum()
    if total == 0:
        return math.nan
    return float(np.trace(matrix) / total)


def macro_f1_from(matrix: np.ndarray) -> float:
    """Macro F1 over the artery and vein classes.

    Background stays in the matrix as an error sink, so vessel pixels
    predicted background depress recall.  When neither class has any
    ground-truth or predicted pixel the score is NaN.
    """
    if matrix.sum() == 0:
        return math.nan
    scores = []
    for cls in (1, 2):
        tp = matrix[cls, cls]
        denom = matrix[cls, :].sum() + matrix[:, cls].sum()
        if denom == 0:
            continue
        scores.append(2.0 * tp / denom)
    return float(np.mean(scores)) if scores else math.nan


def centerline_mask(pred_vessel: BinaryMap) -> BinaryMap:
    """Centerline of discovered vessels: the thinned prediction."""
    return BinaryMap(thin(pred_vessel).bits)


def major_centerline_mask(pred_vessel: BinaryMap) -> BinaryMap:
    """Centerline pixels on vessels of local width >= 2 px.

    Width is twice the chamfer distance, as in the graph's thickness
    estimate.  Skeleton components smaller than three pixels carry no
    usable centerline and are dropped.
    """
    center = centerline_mask(pred_vessel).bits
    width = 2.0 * chamfer_distance(pred_vessel.bits)
    keep = center & (width >= MAJOR_WIDTH_PX)
    labels, count = ndimage.label(center, structure=_EIGHT)
    if count:
        sizes = np.bincount(labels.ravel())
        keep &= sizes[labels] >= MIN_CENTERLINE_COMPONENT
    return BinaryMap(keep)


def vessel_discovery(pred_vessel: BinaryMap, gt_vessel: BinaryMap) -> float:
    """Fraction of ground-truth vessel pixels the prediction covers."""
    if pred_vessel.bits.shape != gt_vessel.bits.shape:
        raise ValueError("dimension mismatch between prediction and ground truth")
    gt_count = int(gt_vessel.bits.sum())
    if gt_count == 0:
        return math.nan
    return float((pred_vessel.bits & gt_vessel.bits).sum() / gt_count)


def roc_auc(scores: np.ndarray, gt_vessel: BinaryMap) -> float:
    """Area under the ROC curve by the rank-sum statistic with midrank ties."""
    if scores.shape != gt_vessel.bits.shape:
        raise ValueError("dimension mismatch between scores and ground truth")
    pos = gt_vessel.bits.ravel()
    s = scores.ravel().astype(np.float64)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    # midranks: tied values share the average of their 1-based rank range
    boundaries = np.nonzero(np.diff(sorted_scores))[0] + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [s.size]))
    for a, b in zip(starts, stops):
        ranks[order[a:b]] = 0.5 * (a + 1 + b)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    """All protocol metrics for one prediction/ground-truth pair."""

    full_image_acc: float
    center_acc: float
    center_f1: float
    center2px_acc: float
    center2px_f1: float
    vessel_discovery: float
    segmentation_auc: float
    pixel_counts: dict[str, list[list[int]]] = field(default_factory=dict)

    NOTES = (
        "vessel discovery is pixel sensitivity |pred & gt| / |gt|; "
        "centerline pixels with background ground truth count as errors"
    )

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "notes": self.NOTES,
            "full_image_acc": clean(self.full_image_acc),
            "center_acc": clean(self.center_acc),
            "center_f1": clean(self.center_f1),
            "center2px_acc": clean(self.center2px_acc),
            "center2px_f1": clean(self.center2px_f1),
            "vessel_discovery": clean(self.vessel_discovery),
            "segmentation_auc": clean(self.segmentation_auc),
            "pixel_counts": self.pixel_counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def row(self) -> list[float]:
        return [
            self.full_image_acc, self.center_acc, self.center_f1,
            self.center2px_acc, self.center2px_f1,
            self.vessel_discovery, self.segmentation_auc,
        ]


TABLE_COLUMNS = (
    "Full Image", "Center Acc.", "Center F1",
    "Center>=2px Acc.", "Center>=2px F1", "Vessel", "AUC",
)


def format_table(rows: dict[str, list[float]]) -> str:
    """Aligned plain-text table with one row per image plus any mean row."""
    name_width = max([len(n) for n in rows] + [len("Image")])
    header = "Image".ljust(name_width) + "".join(
        f"  {c:>16}" for c in TABLE_COLUMNS
    )
    lines = [header, "-" * len(header)]
    for name, values in rows.items():
        cells = "".join(
            f"  {'-':>16}" if math.isnan(v) else f"  {v:>16.4f}" for v in values
        )
        lines.append(name.ljust(name_width) + cells)
    return "\n".join(lines)


def evaluate(
    pred: LabelMap,
    gt: LabelMap,
    gt_vessel: BinaryMap,
    vessel_scores: np.ndarray | None = None,
) -> EvalReport:
    """Compute the full metric suite for one image."""
    if pred.labels.shape != gt.labels.shape or pred.labels.shape != gt_vessel.bits.shape:
        raise ValueError("prediction/ground-truth dimensions differ")
    pred_vessel = pred.vessel_mask()
    full_mask = BinaryMap(np.ones(pred.labels.shape, dtype=bool))
    center = centerline_mask(pred_vessel)
    major = major_centerline_mask(pred_vessel)

    m_full = confusion(pred, gt, full_mask)
    m_center = confusion(pred, gt, center)
    m_major = confusion(pred, gt, major)

    auc = math.nan
    if vessel_scores is not None:
        auc = roc_auc(vessel_scores, gt_vessel)

    return EvalReport(
        full_image_acc=accuracy_from(m_full),
        center_acc=accuracy_from(m_center),
        center_f1=macro_f1_from(m_center),
        center2px_acc=accuracy_from(m_major),
        center2px_f1=macro_f1_from(m_major),
        vessel_discovery=vessel_discovery(pred_vessel, gt_vessel),
        segmentation_auc=auc,
        pixel_counts={
            "full_image": m_full.tolist(),
            "center": m_center.tolist(),
            "center2px": m_major.tolist(),
        },
    )
