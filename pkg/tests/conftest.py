import json

import numpy as np
import pytest

from roar_scrub.dataset import parse_dataset, serialize_dataset
from roar_scrub.imaging import ImageBuffer

PERSON, CHAIR, CAR = 1, 2, 3


def coco_doc(images, annotations, categories=None):
    if categories is None:
        categories = [
            {"id": PERSON, "name": "person", "supercategory": "person"},
            {"id": CHAIR, "name": "chair", "supercategory": "furniture"},
            {"id": CAR, "name": "car", "supercategory": "vehicle"},
        ]
    return {"images": images, "annotations": annotations, "categories": categories}


def image_rec(image_id, width=64, height=48, file_name=None):
    return {
        "id": image_id,
        "file_name": file_name or f"img_{image_id:03d}.png",
        "width": width,
        "height": height,
    }


def ann_rec(ann_id, image_id, category_id, bbox, segmentation="rect", iscrowd=0):
    """COCO annotation dict; segmentation='rect' renders the bbox as a polygon,
    None leaves it absent (bbox fallback path)."""
    x, y, w, h = bbox
    if segmentation == "rect":
        segmentation = [[x, y, x + w, y, x + w, y + h, x, y + h]]
    rec = {
        "id": ann_id,
        "image_id": image_id,
        "category_id": category_id,
        "bbox": list(bbox),
        "area": w * h,
        "iscrowd": iscrowd,
    }
    if segmentation is not None:
        rec["segmentation"] = segmentation
    return rec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_descriptor():
    doc = coco_doc(
        images=[image_rec(1), image_rec(2), image_rec(3), image_rec(4)],
        annotations=[
            ann_rec(10, 1, PERSON, [4, 4, 12, 16]),
            ann_rec(11, 1, CHAIR, [40, 20, 16, 16]),
            ann_rec(12, 2, PERSON, [2, 2, 10, 20]),
            ann_rec(13, 2, PERSON, [30, 8, 12, 24]),
            ann_rec(14, 2, CAR, [28, 6, 20, 14]),
            ann_rec(15, 3, CHAIR, [10, 10, 20, 12]),
            ann_rec(16, 4, PERSON, [16, 12, 18, 20], segmentation=None),
        ],
    )
    return parse_dataset(json.dumps(doc))


def write_image_tree(root, descriptor, seed=7):
    """Write deterministic random PNGs for every image record under root."""
    gen = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for rec in descriptor.images:
        arr = gen.integers(0, 256, size=(rec.height, rec.width, 3), dtype=np.uint8)
        ImageBuffer(arr).save(root / rec.file_name)
    return root


@pytest.fixture
def dataset_on_disk(tmp_path, small_descriptor):
    ann_path = tmp_path / "annotations.json"
    ann_path.write_bytes(serialize_dataset(small_descriptor))
    images = write_image_tree(tmp_path / "images", small_descriptor)
    return {
        "descriptor": small_descriptor,
        "annotations": ann_path,
        "images": images,
        "root": tmp_path,
    }
