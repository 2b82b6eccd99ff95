#!/usr/bin/env python3
"""Generate a synthetic annotated dataset for desk-scale pipeline runs.

Images contain colored rectangles standing in for objects; every rectangle
gets a polygon segmentation. The emitted replay-oracle file mimics a detector
that sees only the non-person objects, i.e. it assumes scrubbing removed every
person (exact for full-privacy runs, optimistic for selective ones).

Usage: python3 scripts/make_demo_dataset.py --out demo --images 24 --seed 3407
"""

import argparse
import json
from pathlib import Path

import numpy as np

from roar_scrub.dataset import parse_dataset, serialize_dataset
from roar_scrub.imaging import ImageBuffer

PERSON, CHAIR, CAR = 1, 2, 3
CATEGORIES = [
    {"id": PERSON, "name": "person", "supercategory": "person"},
    {"id": CHAIR, "name": "chair", "supercategory": "furniture"},
    {"id": CAR, "name": "car", "supercategory": "vehicle"},
]
COLORS = {PERSON: (200, 60, 60), CHAIR: (60, 160, 60), CAR: (60, 80, 200)}


def random_box(rng, width, height, max_frac=0.4):
    w = int(rng.integers(8, int(width * max_frac)))
    h = int(rng.integers(8, int(height * max_frac)))
    x = int(rng.integers(0, width - w))
    y = int(rng.integers(0, height - h))
    return [x, y, w, h]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=24)
    parser.add_argument("--width", type=int, default=160)
    parser.add_argument("--height", type=int, default=120)
    parser.add_argument("--seed", type=int, default=3407)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    images, annotations, oracle = [], [], []
    ann_id = 0
    for image_id in range(1, args.images + 1):
        file_name = f"demo_{image_id:04d}.png"
        canvas = rng.integers(90, 160, (args.height, args.width, 3), dtype=np.uint8)
        n_objects = int(rng.integers(1, 5))
        for _ in range(n_objects):
            category = int(rng.choice([PERSON, PERSON, CHAIR, CAR]))
            x, y, w, h = random_box(rng, args.width, args.height)
            canvas[y : y + h, x : x + w] = COLORS[category]
            ann_id += 1
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": image_id,
                    "category_id": category,
                    "bbox": [x, y, w, h],
                    "area": w * h,
                    "iscrowd": 0,
                    "segmentation": [[x, y, x + w, y, x + w, y + h, x, y + h]],
                }
            )
            oracle.append(
                {
                    "image_id": image_id,
                    "category_id": category,
                    "bbox": [x, y, w, h],
                    "score": round(float(rng.uniform(0.55, 0.99)), 3),
                }
            )
        ImageBuffer(canvas).save(img_dir / file_name)
        images.append(
            {
                "id": image_id,
                "file_name": file_name,
                "width": args.width,
                "height": args.height,
            }
        )

    doc = {"images": images, "annotations": annotations, "categories": CATEGORIES}
    descriptor = parse_dataset(json.dumps(doc))
    (out / "annotations.json").write_bytes(serialize_dataset(descriptor))
    # oracle that still sees only the non-person objects, i.e. a cooperative
    # detector on perfectly scrubbed images
    scrub_blind = [rec for rec in oracle if rec["category_id"] != PERSON]
    (out / "oracle_after_scrub.json").write_text(json.dumps(scrub_blind, indent=2))
    # detector replay for utility evaluation on the raw data
    (out / "detections_raw.json").write_text(json.dumps(oracle, indent=2))
    print(
        f"wrote {len(images)} images, {len(annotations)} annotations, "
        f"{len(scrub_blind)} post-scrub oracle detections under {out}"
    )


if __name__ == "__main__":
    main()
