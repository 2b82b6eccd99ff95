"""Annotation-set algebra after obfuscation: collision, verification, update.

Given the scrub mask and a trusted detector's output on the obfuscated image,
the update keeps untouched annotations as they are, deletes the scrub targets,
and retains a collided bystander only when the detector still sees a matching
object there. Re-annotation never invents annotations and never moves a box.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends import Detection
from .dataset import AnnotationRecord
from .errors import RoarError
from .imaging import BBox, BinaryMask, bbox_iou, bbox_mask_iou


@dataclass(frozen=True)
class ReannotationConfig:
    zeta: float = 0.0  # collision threshold on annotation-vs-mask IoU, strict >
    tau: float = 0.3  # verification threshold on annotation-vs-detection IoU, strict >
    require_category_match: bool = True

    def __post_init__(self):
        if not 0.0 <= self.zeta < 1.0:
            raise RoarError(f"zeta must lie in [0, 1), got {self.zeta}")
        if not 0.0 < self.tau <= 1.0:
            raise RoarError(f"tau must lie in (0, 1], got {self.tau}")


@dataclass(frozen=True)
class AnnotationUpdate:
    """Partition of one image's annotation ids by re-annotation outcome."""

    retained_untouched: tuple[int, ...]
    verified: tuple[int, ...]
    removed: tuple[int, ...]
    scrub_targets_removed: tuple[int, ...]

    def as_dict(self) -> dict:
        return {
            "retained_untouched": list(self.retained_untouched),
            "verified": list(self.verified),
            "removed": list(self.removed),
            "scrub_targets_removed": list(self.scrub_targets_removed),
        }


def _ann_bbox(ann: AnnotationRecord) -> BBox:
    return BBox(*ann.bbox)


def collided(
    annotations: list[AnnotationRecord], mask: BinaryMask, zeta: float
) -> list[AnnotationRecord]:
    """Annotations whose box overlaps the scrub mask more than zeta (strict).

    At zeta = 0 a single shared pixel counts, so every potentially altered
    object is pulled into verification.
    """
    return [a for a in annotations if bbox_mask_iou(_ann_bbox(a), mask) > zeta]


def verify(
    collided_annotations: list[AnnotationRecord],
    oracle_dets: list[Detection],
    tau: float,
    require_category_match: bool = True,
) -> list[AnnotationRecord]:
    """Collided annotations the detector still sees: some detection overlaps the
    original box above tau (and matches its category unless disabled). One
    detection may vouch for several annotations."""
    out = []
    for ann in collided_annotations:
        box = _ann_bbox(ann)
        for det in oracle_dets:
            if require_category_match and det.category_id != ann.category_id:
                continue
            if bbox_iou(box, det.bbox) > tau:
                out.append(ann)
                break
    return out


def update(
    annotations: list[AnnotationRecord],
    scrub_target_ids: set[int],
    mask: BinaryMask,
    oracle_dets: list[Detection],
    cfg: ReannotationConfig,
) -> tuple[list[AnnotationRecord], AnnotationUpdate]:
    """Produce the post-scrub annotation set for one image.

    Scrub targets are deleted unconditionally: their labels are stale by
    construction, and any residual object the detector still sees there is
    accounted for by the privacy metrics instead. Non-targets that never touch
    the mask are retained without verification.
    """
    known_ids = {a.id for a in annotations}
    missing = scrub_target_ids - known_ids
    if missing:
        raise RoarError(f"scrub target ids not present in annotation set: {sorted(missing)}")

    non_targets = [a for a in annotations if a.id not in scrub_target_ids]
    collided_set = {a.id for a in collided(non_targets, mask, cfg.zeta)}
    collided_anns = [a for a in non_targets if a.id in collided_set]
    verified_set = {
        a.id
        for a in verify(collided_anns, oracle_dets, cfg.tau, cfg.require_category_match)
    }

    kept: list[AnnotationRecord] = []
    retained, verified_ids, removed, targets = [], [], [], []
    for ann in annotations:
        if ann.id in scrub_target_ids:
            targets.append(ann.id)
        elif ann.id not in collided_set:
            retained.append(ann.id)
            kept.append(ann)
        elif ann.id in verified_set:
            verified_ids.append(ann.id)
            kept.append(ann)
        else:
            removed.append(ann.id)

    return kept, AnnotationUpdate(
        retained_untouched=tuple(retained),
        verified=tuple(verified_ids),
        removed=tuple(removed),
        scrub_targets_removed=tuple(targets),
    )
