"""Detection evaluation: greedy IoU matching and 101-point interpolated AP.

Follows the standard COCO protocol: detections are matched per image and per
category in descending score order, each consuming at most one ground-truth
box; crowd regions act as ignore zones that absorb detections without scoring
them; AP interpolates the precision envelope at 101 evenly spaced recall
points and averages over IoU thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import Detection
from .dataset import DatasetDescriptor
from .errors import RoarError
from .imaging import BBox, bbox_iou

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
AREA_RANGES = {
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    max_dets: int = 100
    recall_points: int = 101

    def __post_init__(self):
        thrs = tuple(self.iou_thresholds)
        if not thrs or any(not 0 < t <= 1 for t in thrs):
            raise RoarError("iou thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(thrs, thrs[1:])):
            raise RoarError("iou thresholds must be strictly increasing")
        if self.max_dets < 1:
            raise RoarError("max_dets must be >= 1")
        object.__setattr__(self, "iou_thresholds", thrs)


@dataclass(frozen=True)
class EvalGt:
    """One ground-truth box of a single category; ignored boxes (crowd regions
    or out-of-area-range boxes) absorb detections without contributing to
    recall."""

    bbox: BBox
    iscrowd: bool = False
    ignore: bool = False
    area: float | None = None

    @property
    def effective_area(self) -> float:
        return self.bbox.area if self.area is None else self.area


@dataclass(frozen=True)
class UtilityReport:
    mean_ap: float
    per_category_ap: dict[int, float | None]
    relative_to_baseline: float | None = None
    area_breakdown: dict[str, float] = field(default_factory=dict)
    category_names: dict[int, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mean_ap": self.mean_ap,
            "per_category_ap": {
                str(k): v for k, v in sorted(self.per_category_ap.items())
            },
            "relative_to_baseline": self.relative_to_baseline,
            "area_breakdown": dict(self.area_breakdown),
        }

    def format_table(self) -> str:
        lines = [f"{'Class':<20}{'AP':>10}", "-" * 30]
        for cat_id, ap in sorted(self.per_category_ap.items()):
            name = self.category_names.get(cat_id, str(cat_id))
            lines.append(f"{name:<20}{'-' if ap is None else f'{ap:.3f}':>10}")
        lines.append("-" * 30)
        lines.append(f"{'All':<20}{self.mean_ap:>10.3f}")
        if self.relative_to_baseline is not None:
            lines.append(f"{'vs baseline':<20}{100 * self.relative_to_baseline:>9.2f}%")
        return "\n".join(lines)


def _det_gt_iou(det: Detection, gt: EvalGt) -> float:
    if gt.iscrowd:
        # crowd regions score by intersection over detection area
        ix = max(det.bbox.x, gt.bbox.x)
        iy = max(det.bbox.y, gt.bbox.y)
        ix2 = min(det.bbox.x + det.bbox.w, gt.bbox.x + gt.bbox.w)
        iy2 = min(det.bbox.y + det.bbox.h, gt.bbox.y + gt.bbox.h)
        inter = max(0.0, ix2 - ix) * max(0.0, iy2 - iy)
        return inter / det.bbox.area if det.bbox.area > 0 else 0.0
    return bbox_iou(det.bbox, gt.bbox)


def match(
    gts: list[EvalGt],
    dets: list[Detection],
    iou_thr: float,
    area_range: tuple[float, float] | None = None,
) -> list[tuple[Detection, str]]:
    """Label each detection of one image/category as 'tp', 'fp', or 'ignore'.

    Detections are visited in descending score order. Each is matched greedily
    to the not-yet-consumed ground truth with the highest IoU >= iou_thr, ties
    going to the lowest ground-truth index; ignored ground truths are only
    considered when no live one matches. Returns (detection, label) pairs in
    the visiting order.
    """
    if area_range is not None:
        gts = [
            EvalGt(g.bbox, g.iscrowd, g.ignore or not
                   (area_range[0] <= g.effective_area <= area_range[1]), g.area)
            for g in gts
        ]
    order = sorted(range(len(gts)), key=lambda i: gts[i].ignore)  # live boxes first
    det_order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    consumed = [False] * len(gts)
    out: list[tuple[Detection, str]] = []
    for di in det_order:
        det = dets[di]
        best = -1
        best_iou = iou_thr
        for gi in order:
            g = gts[gi]
            if consumed[gi] and not g.iscrowd:
                continue
            if best > -1 and not gts[best].ignore and g.ignore:
                break  # a live match exists; ignored boxes cannot beat it
            iou = _det_gt_iou(det, g)
            if iou < best_iou or (best > -1 and iou <= best_iou):
                continue
            best_iou = iou
            best = gi
        if best == -1:
            in_range = area_range is None or (
                area_range[0] <= det.bbox.area <= area_range[1]
            )
            out.append((det, "fp" if in_range else "ignore"))
        else:
            consumed[best] = True
            out.append((det, "ignore" if gts[best].ignore else "tp"))
    return out


def average_precision(
    labels: list[bool], num_gt: int, recall_points: int = 101
) -> float | None:
    """101-point interpolated AP from score-ordered TP(True)/FP(False) labels.

    The precision curve is made monotone non-increasing from the right, then
    sampled at evenly spaced recall values. A category with no ground truth is
    not scored: returns None so callers can skip it rather than count a zero.
    """
    if num_gt == 0:
        return None
    if not labels:
        return 0.0
    tp = np.cumsum([1 if l else 0 for l in labels], dtype=float)
    fp = np.cumsum([0 if l else 1 for l in labels], dtype=float)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    # k/(points-1) by direct division: equal rational recall levels then compare
    # equal in floating point, so boundary samples are never dropped
    samples = np.arange(recall_points) / (recall_points - 1)
    idx = np.searchsorted(recall, samples, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(sampled.mean())


def _pool_labels(per_image: list[list[tuple[Detection, str]]], image_ids: list[int]):
    """Merge per-image labeled detections into one score-ordered label list,
    dropping ignores. Global order: score desc, then image id, then per-image
    rank, so evaluation does not depend on processing order."""
    entries = []
    for img_id, labeled in zip(image_ids, per_image):
        for rank, (det, label) in enumerate(labeled):
            if label == "ignore":
                continue
            entries.append((-det.score, img_id, rank, label == "tp"))
    entries.sort()
    return [e[3] for e in entries]


def evaluate(
    gt: DatasetDescriptor,
    dets_by_image: dict[int, list[Detection]],
    cfg: EvalConfig = EvalConfig(),
    baseline_ap: float | None = None,
) -> UtilityReport:
    """Dataset-level AP@[0.50:0.95] with per-category table and size breakdown."""
    image_ids = {im.id for im in gt.images}
    unknown_images = set(dets_by_image) - image_ids
    if unknown_images:
        raise RoarError(f"detections reference unknown image ids: {sorted(unknown_images)}")
    cat_ids = gt.category_ids
    for dets in dets_by_image.values():
        bad = {d.category_id for d in dets} - cat_ids
        if bad:
            raise RoarError(f"detections reference unknown category ids: {sorted(bad)}")

    gts_by_img_cat: dict[tuple[int, int], list[EvalGt]] = {}
    num_gt_by_cat: dict[int, int] = {c: 0 for c in cat_ids}
    for ann in gt.annotations:
        entry = EvalGt(
            bbox=BBox(*ann.bbox),
            iscrowd=bool(ann.iscrowd),
            ignore=bool(ann.iscrowd),
            area=ann.area if ann.area > 0 else None,
        )
        gts_by_img_cat.setdefault((ann.image_id, ann.category_id), []).append(entry)
        if not entry.ignore:
            num_gt_by_cat[ann.category_id] += 1

    dets_by_img_cat: dict[tuple[int, int], list[Detection]] = {}
    for img_id, dets in dets_by_image.items():
        ranked = sorted(dets, key=lambda d: -d.score)[: cfg.max_dets]
        for det in ranked:
            dets_by_img_cat.setdefault((img_id, det.category_id), []).append(det)

    sorted_images = sorted(image_ids)

    def ap_for(cat_id: int, thr: float, area_range=None) -> float | None:
        per_image, ids = [], []
        for img_id in sorted_images:
            gts = gts_by_img_cat.get((img_id, cat_id), [])
            dets = dets_by_img_cat.get((img_id, cat_id), [])
            if not gts and not dets:
                continue
            per_image.append(match(gts, dets, thr, area_range=area_range))
            ids.append(img_id)
        if area_range is None:
            num_gt = num_gt_by_cat[cat_id]
        else:
            num_gt = sum(
                1
                for img_id in sorted_images
                for g in gts_by_img_cat.get((img_id, cat_id), [])
                if not g.ignore and area_range[0] <= g.effective_area <= area_range[1]
            )
        return average_precision(
            _pool_labels(per_image, ids), num_gt, cfg.recall_points
        )

    per_category: dict[int, float | None] = {}
    for cat_id in sorted(cat_ids):
        if num_gt_by_cat[cat_id] == 0:
            per_category[cat_id] = None
            continue
        values = [ap_for(cat_id, thr) for thr in cfg.iou_thresholds]
        per_category[cat_id] = float(np.mean([v for v in values if v is not None]))

    scored = [v for v in per_category.values() if v is not None]
    mean_ap = float(np.mean(scored)) if scored else 0.0

    area_breakdown: dict[str, float] = {}
    for name, rng in AREA_RANGES.items():
        values = []
        for cat_id in sorted(cat_ids):
            per_thr = [ap_for(cat_id, thr, rng) for thr in cfg.iou_thresholds]
            per_thr = [v for v in per_thr if v is not None]
            if per_thr:
                values.append(float(np.mean(per_thr)))
        area_breakdown[name] = float(np.mean(values)) if values else 0.0

    return UtilityReport(
        mean_ap=mean_ap,
        per_category_ap=per_category,
        relative_to_baseline=(
            relative_to_baseline(mean_ap, baseline_ap) if baseline_ap else None
        ),
        area_breakdown=area_breakdown,
        category_names={c.id: c.name for c in gt.categories},
    )


def relative_to_baseline(value: float, baseline: float) -> float:
    """Ratio of a run's AP to the baseline AP."""
    if baseline <= 0:
        raise RoarError("baseline AP must be positive")
    return value / baseline


def detections_from_results(results: list[dict]) -> dict[int, list[Detection]]:
    """Group a COCO results list ({image_id, category_id, bbox, score}) by image."""
    by_image: dict[int, list[Detection]] = {}
    for rec in results:
        by_image.setdefault(int(rec["image_id"]), []).append(
            Detection(
                bbox=BBox(*(float(v) for v in rec["bbox"])),
                category_id=int(rec["category_id"]),
                score=float(rec["score"]),
            )
        )
    return by_image
