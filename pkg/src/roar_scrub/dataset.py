"""COCO-style dataset parsing, validation, serialization, and statistics.

Descriptors are immutable after parse and safe to share across workers.
Serialization is deterministic: equal descriptors produce identical bytes.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass

from .errors import DatasetValidationError, ParseError

# Canonical key order on write keeps output bytes stable across runs.
_IMAGE_KEYS = ("id", "file_name", "width", "height")
_ANN_KEYS = ("id", "image_id", "category_id", "bbox", "area", "segmentation", "iscrowd")
_CAT_KEYS = ("id", "name", "supercategory")


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DatasetValidationError(
                f"image {self.id}: dimensions must be positive, got {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class AnnotationRecord:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    area: float = 0.0
    segmentation: object = None  # polygon list, RLE dict, or None
    iscrowd: int = 0

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w < 0 or h < 0:
            raise DatasetValidationError(
                f"annotation {self.id}: bbox extent must be non-negative, got w={w} h={h}"
            )
        if self.area < 0:
            raise DatasetValidationError(f"annotation {self.id}: area must be >= 0")


@dataclass(frozen=True)
class CategoryRecord:
    id: int
    name: str
    supercategory: str = ""


@dataclass(frozen=True)
class DatasetDescriptor:
    images: tuple[ImageRecord, ...]
    annotations: tuple[AnnotationRecord, ...]
    categories: tuple[CategoryRecord, ...]

    def image_by_id(self, image_id: int) -> ImageRecord:
        return self._image_index[image_id]

    def annotations_for(self, image_id: int) -> list[AnnotationRecord]:
        return [a for a in self.annotations if a.image_id == image_id]

    @property
    def _image_index(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    @property
    def category_ids(self) -> set[int]:
        return {c.id for c in self.categories}


@dataclass(frozen=True)
class DatasetStats:
    total_images: int
    total_annotations: int
    sensitive_annotations: int
    images_with_sensitive: int
    gamma: float  # fraction of images holding at least one sensitive annotation
    mean_sensitive_per_image: float
    median_sensitive_per_image: float


def _clamp_bbox(bbox, image: ImageRecord) -> tuple[float, float, float, float]:
    x, y, w, h = (float(v) for v in bbox)
    x0 = min(max(x, 0.0), image.width)
    y0 = min(max(y, 0.0), image.height)
    x1 = min(max(x + w, 0.0), image.width)
    y1 = min(max(y + h, 0.0), image.height)
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


def build_descriptor(doc: dict) -> DatasetDescriptor:
    """Validate a decoded annotation document and freeze it into a descriptor."""
    images = []
    image_ids: set[int] = set()
    for rec in doc.get("images", []):
        try:
            img = ImageRecord(
                id=int(rec["id"]),
                file_name=str(rec["file_name"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
            )
        except KeyError as e:
            raise DatasetValidationError(f"image record missing field {e}") from None
        if img.id in image_ids:
            raise DatasetValidationError(f"duplicate image id {img.id}")
        image_ids.add(img.id)
        images.append(img)
    image_index = {im.id: im for im in images}

    categories = []
    category_ids: set[int] = set()
    for rec in doc.get("categories", []):
        try:
            cat = CategoryRecord(
                id=int(rec["id"]),
                name=str(rec["name"]),
                supercategory=str(rec.get("supercategory", "")),
            )
        except KeyError as e:
            raise DatasetValidationError(f"category record missing field {e}") from None
        if cat.id in category_ids:
            raise DatasetValidationError(f"duplicate category id {cat.id}")
        category_ids.add(cat.id)
        categories.append(cat)

    annotations = []
    ann_ids: set[int] = set()
    for rec in doc.get("annotations", []):
        try:
            ann_id = int(rec["id"])
            image_id = int(rec["image_id"])
            category_id = int(rec["category_id"])
            bbox = rec["bbox"]
        except KeyError as e:
            raise DatasetValidationError(f"annotation record missing field {e}") from None
        if ann_id in ann_ids:
            raise DatasetValidationError(f"duplicate annotation id {ann_id}")
        ann_ids.add(ann_id)
        if image_id not in image_index:
            raise DatasetValidationError(
                f"annotation {ann_id} references missing image id {image_id}"
            )
        if category_id not in category_ids:
            raise DatasetValidationError(
                f"annotation {ann_id} references missing category id {category_id}"
            )
        if len(bbox) != 4 or float(bbox[2]) < 0 or float(bbox[3]) < 0:
            raise DatasetValidationError(
                f"annotation {ann_id}: bbox must be [x, y, w, h] with w, h >= 0, got {bbox}"
            )
        annotations.append(
            AnnotationRecord(
                id=ann_id,
                image_id=image_id,
                category_id=category_id,
                bbox=_clamp_bbox(bbox, image_index[image_id]),
                area=float(rec.get("area", 0.0)),
                segmentation=rec.get("segmentation"),
                iscrowd=int(rec.get("iscrowd", 0)),
            )
        )

    return DatasetDescriptor(
        images=tuple(images),
        annotations=tuple(annotations),
        categories=tuple(categories),
    )


def parse_dataset(data: bytes | str) -> DatasetDescriptor:
    """Parse a COCO-format annotation document and validate every record."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed annotation document: {e.msg}", offset=e.pos) from None
    if not isinstance(doc, dict):
        raise ParseError("annotation document must be a JSON object", offset=0)
    return build_descriptor(doc)


def _record_dict(record, keys) -> dict:
    out = {}
    for key in keys:
        value = getattr(record, key)
        if key == "bbox":
            value = [float(v) for v in value]
        if key == "segmentation" and value is None:
            continue
        out[key] = value
    return out


def serialize_dataset(d: DatasetDescriptor) -> bytes:
    """Write a COCO-format document with stable key ordering; byte-deterministic."""
    doc = {
        "images": [_record_dict(im, _IMAGE_KEYS) for im in d.images],
        "annotations": [_record_dict(a, _ANN_KEYS) for a in d.annotations],
        "categories": [_record_dict(c, _CAT_KEYS) for c in d.categories],
    }
    return json.dumps(doc, indent=2, sort_keys=False).encode("utf-8")


def compute_stats(d: DatasetDescriptor, sensitive: set[int]) -> DatasetStats:
    """Count sensitive annotations/images and the sensitive-image fraction.

    Per-image mean and median are taken over images that hold at least one
    sensitive annotation, matching how per-person distribution tables are
    usually reported.
    """
    if not sensitive:
        raise DatasetValidationError("sensitive category set must be non-empty")
    unknown = sensitive - d.category_ids
    if unknown:
        raise DatasetValidationError(f"unknown sensitive category ids: {sorted(unknown)}")

    per_image: dict[int, int] = {}
    sensitive_count = 0
    for ann in d.annotations:
        if ann.category_id in sensitive:
            sensitive_count += 1
            per_image[ann.image_id] = per_image.get(ann.image_id, 0) + 1

    counts = list(per_image.values())
    total_images = len(d.images)
    return DatasetStats(
        total_images=total_images,
        total_annotations=len(d.annotations),
        sensitive_annotations=sensitive_count,
        images_with_sensitive=len(counts),
        gamma=(len(counts) / total_images) if total_images else 0.0,
        mean_sensitive_per_image=(sensitive_count / len(counts)) if counts else 0.0,
        median_sensitive_per_image=float(statistics.median(counts)) if counts else 0.0,
    )
