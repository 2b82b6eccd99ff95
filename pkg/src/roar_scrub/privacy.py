"""Privacy-side scoring: person/image removal efficiency, image loss, annotation reduction.

Removal efficiency comes in two flavors. Full-privacy mode scores the fraction
of ground-truth persons that are gone after scrubbing; selective mode only
asks, per image, whether the person count dropped at all, because the removed
identity is unknown. Image efficiency is the share of images cleared entirely
and is meaningless in selective mode, where clearing an image was never the
goal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .dataset import DatasetDescriptor
from .errors import MetricNotApplicableError, UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerImageCount:
    image_id: int
    gt_persons: int
    scrubbed_persons: int


@dataclass(frozen=True)
class PrivacyReport:
    mode: str
    pe_percent: float | None
    ie_percent: float | None  # absent in selective mode
    images_lost: tuple[int, float]
    annotation_reduction: tuple[int, float]
    per_image_counts: tuple[PerImageCount, ...]
    detector_fnr_estimate: float | None = None
    notes: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "pe_percent": self.pe_percent,
            "ie_percent": self.ie_percent,
            "images_lost": {"count": self.images_lost[0], "percent": self.images_lost[1]},
            "annotation_reduction": {
                "count": self.annotation_reduction[0],
                "percent": self.annotation_reduction[1],
            },
            "per_image_counts": [
                {
                    "image_id": c.image_id,
                    "gt_persons": c.gt_persons,
                    "scrubbed_persons": c.scrubbed_persons,
                }
                for c in self.per_image_counts
            ],
            "detector_fnr_estimate": self.detector_fnr_estimate,
            "notes": list(self.notes),
        }


def pe_fp(per_image: list[tuple[int, int]]) -> float:
    """Person removal efficiency for full-privacy runs.

    100 * sum(gt - scrubbed) / sum(gt) over the sensitive image set; a
    per-image surplus (detector sees more persons than ground truth held) is
    clamped to zero with a warning rather than rewarding the run.
    """
    total_gt = sum(gt for gt, _ in per_image)
    if total_gt <= 0:
        raise UndefinedMetricError("pe_fp is undefined: no ground-truth persons in scope")
    removed = 0
    for gt, scrubbed in per_image:
        if gt < 0:
            raise UndefinedMetricError(f"negative ground-truth count {gt}")
        if scrubbed > gt:
            logger.warning(
                "scrubbed count %d exceeds ground truth %d; clamping term to 0",
                scrubbed,
                gt,
            )
            continue
        removed += gt - scrubbed
    return 100.0 * removed / total_gt


def pe_sp(per_image: list[tuple[int, int]]) -> float:
    """Person removal efficiency for selective runs: share of images whose
    person count decreased."""
    if not per_image:
        raise UndefinedMetricError("pe_sp is undefined over an empty image set")
    hits = sum(1 for gt, scrubbed in per_image if scrubbed < gt)
    return 100.0 * hits / len(per_image)


def ie(scrubbed_counts: list[int], mode: str = "fp") -> float:
    """Image removal efficiency: share of images with zero persons left."""
    if mode.startswith("sp"):
        raise MetricNotApplicableError(
            "image efficiency is not defined for selective scrubbing"
        )
    if not scrubbed_counts:
        raise UndefinedMetricError("ie is undefined over an empty image set")
    cleared = sum(1 for c in scrubbed_counts if c == 0)
    return 100.0 * cleared / len(scrubbed_counts)


def reduction_stats(
    before: DatasetDescriptor,
    after: DatasetDescriptor,
    excluded: set[int],
) -> tuple[tuple[int, float], tuple[int, float]]:
    """Image loss and annotation reduction between dataset versions.

    Annotation reduction counts only categories outside `excluded` (the
    sensitive classes are expected to shrink; the interesting loss is the
    collateral one).
    """
    before_images = {im.id for im in before.images}
    after_images = {im.id for im in after.images}
    stray = after_images - before_images
    if stray:
        raise UndefinedMetricError(f"processed dataset has unknown image ids: {sorted(stray)}")

    lost = len(before_images) - len(after_images)
    lost_pct = 100.0 * lost / len(before_images) if before_images else 0.0

    before_other = sum(1 for a in before.annotations if a.category_id not in excluded)
    after_other = sum(1 for a in after.annotations if a.category_id not in excluded)
    removed = before_other - after_other
    removed_pct = 100.0 * removed / before_other if before_other else 0.0
    return (lost, lost_pct), (removed, removed_pct)


def build_privacy_report(
    mode: str,
    per_image_counts: list[PerImageCount],
    images_lost: tuple[int, float],
    annotation_reduction: tuple[int, float],
    detector_fnr_estimate: float | None = None,
) -> PrivacyReport:
    """Assemble the full report; metrics whose denominators are empty become
    None with an explanatory note instead of failing the run."""
    notes: list[str] = []
    pairs = [(c.gt_persons, c.scrubbed_persons) for c in per_image_counts]

    pe_value: float | None
    try:
        pe_value = pe_sp(pairs) if mode.startswith("sp") else pe_fp(pairs)
    except UndefinedMetricError as e:
        pe_value = None
        notes.append(f"pe: {e}")

    ie_value: float | None
    if mode.startswith("sp"):
        ie_value = None
        notes.append("ie: not applicable to selective scrubbing")
    else:
        try:
            ie_value = ie([c.scrubbed_persons for c in per_image_counts], mode=mode)
        except UndefinedMetricError as e:
            ie_value = None
            notes.append(f"ie: {e}")

    no_mask = sum(1 for c in per_image_counts if c.gt_persons == 0)
    if no_mask:
        notes.append(f"{no_mask} selected images had no ground-truth persons")

    return PrivacyReport(
        mode=mode,
        pe_percent=pe_value,
        ie_percent=ie_value,
        images_lost=images_lost,
        annotation_reduction=annotation_reduction,
        per_image_counts=tuple(per_image_counts),
        detector_fnr_estimate=detector_fnr_estimate,
        notes=tuple(notes),
    )


def format_privacy_table(report: PrivacyReport, method: str = "run") -> str:
    """Fixed-width console table with the usual privacy columns."""

    def fmt(value: float | None) -> str:
        return f"{value:.2f}" if value is not None else "-"

    header = (
        f"{'Method':<16}{'PE (%)':>10}{'IE (%)':>10}"
        f"{'Img. Lost':>20}{'Annot. Red.':>20}"
    )
    lost_n, lost_pct = report.images_lost
    red_n, red_pct = report.annotation_reduction
    row = (
        f"{method:<16}{fmt(report.pe_percent):>10}{fmt(report.ie_percent):>10}"
        f"{f'{lost_n} ({lost_pct:.2f}%)':>20}{f'{red_n} ({red_pct:.2f}%)':>20}"
    )
    return "\n".join([header, "-" * len(header), row])
