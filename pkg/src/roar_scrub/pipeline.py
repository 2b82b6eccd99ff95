"""End-to-end scrub orchestration: plan, execute, report.

Planning decides per image whether to scrub (and which annotations), drop, or
keep. Execution rasterizes target masks, calls the inpainting backend,
re-composites so pixels outside the scrub mask are byte-identical to the
input, runs the oracle detector, applies the annotation update, and writes the
processed dataset plus an auditable run manifest.

Determinism: every random draw is keyed by a stable per-image seed derived by
hashing (seed, image_id), and results are merged in image-id order, so output
bytes do not depend on worker count or scheduling.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backends import DetectBackend, InpaintBackend, InpaintRequest, DEFAULT_PROMPT
from .dataset import (
    AnnotationRecord,
    DatasetDescriptor,
    serialize_dataset,
)
from .detection_eval import EvalConfig, UtilityReport, evaluate
from .errors import RoarError
from .imaging import (
    BinaryMask,
    ImageBuffer,
    composite,
    dilate,
    pixel_span,
    rasterize_annotation,
    union,
)
from .privacy import (
    PerImageCount,
    PrivacyReport,
    build_privacy_report,
    reduction_stats,
)
from .reannotate import AnnotationUpdate, ReannotationConfig, update

logger = logging.getLogger(__name__)

MODES = ("fp", "sp", "fp_drop", "sp_drop")


@dataclass(frozen=True)
class ScrubPolicy:
    mode: str
    sensitive_categories: frozenset[int]
    dilate_px: float = 0.0
    selection_seed: int = 42
    global_seed: int = 3407
    score_threshold: float = 0.5
    prompt: str = DEFAULT_PROMPT

    def __post_init__(self):
        if self.mode not in MODES:
            raise RoarError(f"unknown mode '{self.mode}'; choose from {MODES}")
        if not self.sensitive_categories:
            raise RoarError("at least one sensitive category is required")
        if self.dilate_px < 0:
            raise RoarError("dilate_px must be >= 0")
        object.__setattr__(
            self, "sensitive_categories", frozenset(self.sensitive_categories)
        )


@dataclass(frozen=True)
class PlanAction:
    image_id: int
    kind: str  # scrub | drop | keep
    target_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ScrubPlan:
    policy: ScrubPolicy
    actions: tuple[PlanAction, ...]
    warnings: tuple[str, ...] = ()

    @property
    def scrub_actions(self) -> list[PlanAction]:
        return [a for a in self.actions if a.kind == "scrub"]


def stable_seed(seed: int, image_id: int) -> int:
    """Order-free per-image seed: hash of (seed, image_id)."""
    digest = hashlib.sha256(f"{seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _content_digest(*parts: bytes | str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode() if isinstance(part, str) else bytes(part))
        h.update(b"\x00")
    return h.hexdigest()[:16]


def plan(dataset: DatasetDescriptor, policy: ScrubPolicy) -> ScrubPlan:
    """Turn a policy into per-image actions.

    Full-privacy modes target every eligible sensitive annotation of every
    sensitive image (or drop those images). Selective modes pick half of the
    sensitive images with the selection seed and one target annotation per
    picked image with a per-image derived seed. Crowd annotations are never
    eligible targets.
    """
    unknown = policy.sensitive_categories - dataset.category_ids
    if unknown:
        raise RoarError(f"sensitive categories not in dataset: {sorted(unknown)}")

    eligible: dict[int, list[int]] = {}
    for ann in dataset.annotations:
        if ann.category_id in policy.sensitive_categories and not ann.iscrowd:
            eligible.setdefault(ann.image_id, []).append(ann.id)
    sensitive_images = sorted(eligible)

    warnings: list[str] = []
    if not sensitive_images:
        warnings.append("no image holds an eligible sensitive annotation; plan is a no-op")

    selected: set[int] = set(sensitive_images)
    if policy.mode.startswith("sp") and sensitive_images:
        k = len(sensitive_images) // 2
        rng = np.random.default_rng(policy.selection_seed)
        picked = rng.choice(np.array(sensitive_images, dtype=np.int64), size=k, replace=False)
        selected = {int(i) for i in picked}

    actions: list[PlanAction] = []
    for image in dataset.images:
        image_id = image.id
        if image_id not in eligible or image_id not in selected:
            actions.append(PlanAction(image_id, "keep"))
            continue
        if policy.mode.endswith("_drop"):
            actions.append(PlanAction(image_id, "drop"))
            continue
        targets = sorted(eligible[image_id])
        if policy.mode == "sp":
            rng = np.random.default_rng(stable_seed(policy.selection_seed, image_id))
            targets = [targets[int(rng.integers(len(targets)))]]
        actions.append(PlanAction(image_id, "scrub", tuple(targets)))
    return ScrubPlan(policy=policy, actions=tuple(actions), warnings=tuple(warnings))


@dataclass
class ImageResult:
    image_id: int
    action: str
    status: str = "ok"  # ok | failed
    cause: str | None = None
    target_ids: tuple[int, ...] = ()
    inpaint_request_id: str | None = None
    gt_person_count: int = 0
    oracle_person_count: int | None = None
    annotation_update: AnnotationUpdate | None = None
    dropped_annotation_empty: bool = False
    kept_annotations: list[AnnotationRecord] = field(default_factory=list)
    wrote_image: bool = False
    duration_ms: float = 0.0

    def manifest_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "action": self.action,
            "status": self.status,
            "cause": self.cause,
            "target_ids": list(self.target_ids),
            "inpaint_request_id": self.inpaint_request_id,
            "gt_person_count": self.gt_person_count,
            "oracle_person_count": self.oracle_person_count,
            "annotation_update": (
                self.annotation_update.as_dict() if self.annotation_update else None
            ),
            "dropped_annotation_empty": self.dropped_annotation_empty,
            "duration_ms": self.duration_ms,
        }


@dataclass
class RunManifest:
    config: dict
    records: list[dict]
    totals: dict = field(default_factory=dict)
    tool_version: str = __version__
    wall_clock_seconds: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def as_dict(self, include_timings: bool = True) -> dict:
        records = self.records
        if not include_timings:
            records = [
                {k: v for k, v in rec.items() if k != "duration_ms"} for rec in records
            ]
        doc = {
            "tool_version": self.tool_version,
            "config": self.config,
            "records": records,
            "totals": self.totals,
            "warnings": self.warnings,
        }
        if include_timings:
            doc["wall_clock_seconds"] = self.wall_clock_seconds
        return doc

    def canonical_bytes(self, include_timings: bool = False) -> bytes:
        return json.dumps(self.as_dict(include_timings), indent=2, sort_keys=True).encode()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(
            json.dumps(self.as_dict(True), indent=2, sort_keys=True).encode()
        )

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        doc = json.loads(Path(path).read_bytes())
        return cls(
            config=doc["config"],
            records=doc["records"],
            totals=doc.get("totals", {}),
            tool_version=doc.get("tool_version", "unknown"),
            wall_clock_seconds=doc.get("wall_clock_seconds", 0.0),
            warnings=doc.get("warnings", []),
        )


def _bbox_rect_mask(ann: AnnotationRecord, width: int, height: int) -> BinaryMask:
    bits = np.zeros((height, width), dtype=bool)
    x0, x1 = pixel_span(ann.bbox[0], ann.bbox[2], width)
    y0, y1 = pixel_span(ann.bbox[1], ann.bbox[3], height)
    bits[y0:y1, x0:x1] = True
    return BinaryMask(bits)


def target_mask(ann: AnnotationRecord, width: int, height: int) -> BinaryMask:
    """Rasterize an annotation's segmentation; fall back to its bbox rectangle
    when segmentation is absent or rasterizes to nothing."""
    if ann.segmentation is not None:
        mask = rasterize_annotation(ann.segmentation, width, height)
        if mask.bits.any():
            return mask
    return _bbox_rect_mask(ann, width, height)


@dataclass
class ExecutionResult:
    dataset: DatasetDescriptor
    manifest: RunManifest
    failures: int


def _process_image(
    action: PlanAction,
    dataset: DatasetDescriptor,
    image_root: Path,
    out_images: Path,
    inpainter: InpaintBackend,
    oracle: DetectBackend,
    reann_cfg: ReannotationConfig,
    policy: ScrubPolicy,
) -> ImageResult:
    started = time.perf_counter()
    record = dataset.image_by_id(action.image_id)
    anns = dataset.annotations_for(action.image_id)
    result = ImageResult(
        image_id=action.image_id,
        action=action.kind,
        gt_person_count=sum(
            1
            for a in anns
            if a.category_id in policy.sensitive_categories and not a.iscrowd
        ),
    )
    src = image_root / record.file_name
    dst = out_images / record.file_name

    try:
        if action.kind == "keep":
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
            result.kept_annotations = anns
            result.wrote_image = True
        elif action.kind == "drop":
            result.oracle_person_count = 0
        else:
            image = ImageBuffer.load(src)
            masks = [target_mask(a, record.width, record.height)
                     for a in anns if a.id in action.target_ids]
            scrub_mask = dilate(union(masks), policy.dilate_px)
            seed = stable_seed(policy.global_seed, action.image_id)
            result.inpaint_request_id = _content_digest(
                "inpaint",
                image.data.tobytes(),
                np.packbits(scrub_mask.bits).tobytes(),
                policy.prompt,
                str(seed),
            )
            raw = inpainter.inpaint(
                InpaintRequest(image=image, mask=scrub_mask, prompt=policy.prompt, seed=seed)
            )
            out_image = composite(image, scrub_mask, raw)
            dets = oracle.detect(
                out_image, policy.score_threshold, image_id=action.image_id
            )
            result.oracle_person_count = sum(
                1 for d in dets if d.category_id in policy.sensitive_categories
            )
            kept, upd = update(anns, set(action.target_ids), scrub_mask, dets, reann_cfg)
            result.annotation_update = upd
            result.target_ids = action.target_ids
            if anns and not kept:
                result.dropped_annotation_empty = True
            else:
                dst.parent.mkdir(parents=True, exist_ok=True)
                out_image.save(dst)
                result.kept_annotations = kept
                result.wrote_image = True
    except Exception as e:
        logger.warning("image %d failed: %s", action.image_id, e)
        result.status = "failed"
        result.cause = str(e)
        result.kept_annotations = []
        result.wrote_image = False
    result.duration_ms = (time.perf_counter() - started) * 1000.0
    return result


def execute(
    scrub_plan: ScrubPlan,
    dataset: DatasetDescriptor,
    image_root: str | Path,
    out_root: str | Path,
    inpainter: InpaintBackend,
    oracle: DetectBackend,
    reann_cfg: ReannotationConfig = ReannotationConfig(),
    workers: int = 1,
) -> ExecutionResult:
    """Run every planned action and write the processed dataset under out_root
    (images/ subtree plus annotations.json and manifest.json)."""
    policy = scrub_plan.policy
    image_root = Path(image_root)
    out_root = Path(out_root)
    out_images = out_root / "images"
    out_images.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    results: dict[int, ImageResult] = {}
    if workers <= 1:
        for action in scrub_plan.actions:
            results[action.image_id] = _process_image(
                action, dataset, image_root, out_images, inpainter, oracle,
                reann_cfg, policy,
            )
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(
                    _process_image, action, dataset, image_root, out_images,
                    inpainter, oracle, reann_cfg, policy,
                ): action.image_id
                for action in scrub_plan.actions
            }
            for fut in concurrent.futures.as_completed(futures):
                res = fut.result()
                results[res.image_id] = res

    # manifest records merge in image-id order; the output dataset preserves
    # the input document's record order so an all-keep run is byte-identical
    ordered = [results[image_id] for image_id in sorted(results)]
    kept_images = tuple(im for im in dataset.images if results[im.id].wrote_image)
    kept_ids = {im.id for im in kept_images}
    kept_ann_ids = {
        ann.id
        for res in ordered
        if res.image_id in kept_ids
        for ann in res.kept_annotations
    }
    kept_annotations = tuple(
        ann for ann in dataset.annotations if ann.id in kept_ann_ids
    )
    processed = DatasetDescriptor(
        images=kept_images,
        annotations=kept_annotations,
        categories=dataset.categories,
    )

    failures = sum(1 for r in ordered if r.status == "failed")
    sensitive = policy.sensitive_categories
    manifest = RunManifest(
        config={
            "mode": policy.mode,
            "sensitive_categories": sorted(policy.sensitive_categories),
            "dilate_px": policy.dilate_px,
            "selection_seed": policy.selection_seed,
            "global_seed": policy.global_seed,
            "score_threshold": policy.score_threshold,
            "prompt": policy.prompt,
            "zeta": reann_cfg.zeta,
            "tau": reann_cfg.tau,
            "require_category_match": reann_cfg.require_category_match,
            "inpainter": inpainter.name,
            "oracle": oracle.name,
        },
        records=[r.manifest_record() for r in ordered],
        totals={
            "input_images": len(dataset.images),
            "output_images": len(processed.images),
            "input_other_annotations": sum(
                1 for a in dataset.annotations if a.category_id not in sensitive
            ),
            "output_other_annotations": sum(
                1 for a in processed.annotations if a.category_id not in sensitive
            ),
        },
        warnings=list(scrub_plan.warnings),
        wall_clock_seconds=time.perf_counter() - started,
    )

    (out_root / "annotations.json").write_bytes(serialize_dataset(processed))
    manifest.save(out_root / "manifest.json")
    return ExecutionResult(dataset=processed, manifest=manifest, failures=failures)


@dataclass(frozen=True)
class RunReport:
    privacy: PrivacyReport
    utility: UtilityReport | None = None
    quality: dict | None = None


def privacy_counts_from_manifest(manifest: RunManifest) -> list[PerImageCount]:
    """Per-image (ground truth, post-scrub) person counts for the metric set N:
    scrub actions report the oracle count, drops count zero, failures and
    untouched images are excluded."""
    counts = []
    for rec in manifest.records:
        if rec["status"] != "ok" or rec["action"] == "keep":
            continue
        counts.append(
            PerImageCount(
                image_id=rec["image_id"],
                gt_persons=rec.get("gt_person_count", 0),
                scrubbed_persons=rec["oracle_person_count"] or 0,
            )
        )
    return counts


def privacy_report_from_manifest(manifest: RunManifest) -> PrivacyReport:
    """Rebuild the privacy report from a saved manifest alone."""
    totals = manifest.totals
    lost = totals.get("input_images", 0) - totals.get("output_images", 0)
    lost_pct = 100.0 * lost / totals["input_images"] if totals.get("input_images") else 0.0
    removed = totals.get("input_other_annotations", 0) - totals.get(
        "output_other_annotations", 0
    )
    removed_pct = (
        100.0 * removed / totals["input_other_annotations"]
        if totals.get("input_other_annotations")
        else 0.0
    )
    return build_privacy_report(
        mode=manifest.config["mode"],
        per_image_counts=privacy_counts_from_manifest(manifest),
        images_lost=(lost, lost_pct),
        annotation_reduction=(removed, removed_pct),
    )


def report(
    original: DatasetDescriptor,
    processed: DatasetDescriptor,
    manifest: RunManifest,
    eval_gt: DatasetDescriptor | None = None,
    detections=None,
    eval_cfg: EvalConfig = EvalConfig(),
    baseline_ap: float | None = None,
    quality_reports: list | None = None,
) -> RunReport:
    """Assemble privacy (always), utility (when detections are supplied), and
    image-quality (when per-pair reports are supplied) summaries."""
    sensitive = set(manifest.config["sensitive_categories"])
    images_lost, annotation_reduction = reduction_stats(original, processed, sensitive)
    privacy = build_privacy_report(
        mode=manifest.config["mode"],
        per_image_counts=privacy_counts_from_manifest(manifest),
        images_lost=images_lost,
        annotation_reduction=annotation_reduction,
    )
    utility = None
    if detections is not None:
        utility = evaluate(eval_gt or original, detections, eval_cfg, baseline_ap)
    quality = None
    if quality_reports:
        from .quality import scene_means

        quality = scene_means(quality_reports)
    return RunReport(privacy=privacy, utility=utility, quality=quality)
