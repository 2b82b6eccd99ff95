"""Raster primitives: images, binary masks, rasterization, morphology, IoU, compositing.

All operations are pure functions on immutable inputs. Pixel membership for
polygons and boxes uses pixel-center sampling: pixel (x, y) has its center at
(x + 0.5, y + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionMismatchError, RoarError


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x C 8-bit raster image, row-major, C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise RoarError(f"image must be HxWxC with C in (1, 3), got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def load(cls, path: str | Path) -> "ImageBuffer":
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return cls(arr)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        if path.suffix:
            self.to_pil().save(path)
        else:
            self.to_pil().save(path, format="PNG")

    def to_pil(self) -> Image.Image:
        if self.channels == 1:
            return Image.fromarray(self.data[:, :, 0], mode="L")
        return Image.fromarray(self.data, mode="RGB")

    @classmethod
    def from_pil(cls, im: Image.Image) -> "ImageBuffer":
        if im.mode == "L":
            return cls(np.asarray(im, dtype=np.uint8))
        return cls(np.asarray(im.convert("RGB"), dtype=np.uint8))

    @classmethod
    def constant(cls, width: int, height: int, value, channels: int = 3) -> "ImageBuffer":
        arr = np.empty((height, width, channels), dtype=np.uint8)
        arr[:] = value
        return cls(arr)


@dataclass(frozen=True)
class BinaryMask:
    """H x W boolean raster. True marks pixels to scrub."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if arr.ndim != 2:
            raise RoarError(f"mask must be HxW, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def load(cls, path: str | Path) -> "BinaryMask":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        return cls(arr >= 128)

    def save(self, path: str | Path) -> None:
        # Gray8 encoding: 0 = keep, 255 = scrub.
        Image.fromarray(np.where(self.bits, 255, 0).astype(np.uint8), mode="L").save(
            path, format="PNG"
        )


@dataclass(frozen=True)
class BBox:
    """[x, y, w, h] box, top-left origin, pixel units, floats allowed."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise RoarError(f"bbox must have non-negative extent, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def pixel_span(lo: float, size: float, limit: int) -> tuple[int, int]:
    """Half-open pixel-index range [start, stop) whose centers fall in [lo, lo+size)."""
    start = math.ceil(lo - 0.5)
    stop = math.ceil(lo + size - 0.5)
    return max(0, min(start, limit)), max(0, min(stop, limit))


def rasterize_polygons(polygons: list[list[float]], width: int, height: int) -> BinaryMask:
    """Fill a list of flat [x0, y0, x1, y1, ...] polygons; even-odd rule per polygon,
    union across polygons, pixel-center sampling."""
    bits = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        pts = np.asarray(poly, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 3:
            continue
        xs, ys = pts[:, 0], pts[:, 1]
        y_lo = max(0, math.ceil(ys.min() - 0.5))
        y_hi = min(height, math.ceil(ys.max() - 0.5) + 1)
        for py in range(y_lo, y_hi):
            yc = py + 0.5
            crossings = []
            for i in range(pts.shape[0]):
                x1, y1 = xs[i], ys[i]
                x2, y2 = xs[(i + 1) % pts.shape[0]], ys[(i + 1) % pts.shape[0]]
                if (y1 <= yc < y2) or (y2 <= yc < y1):
                    crossings.append(x1 + (yc - y1) * (x2 - x1) / (y2 - y1))
            crossings.sort()
            for k in range(0, len(crossings) - 1, 2):
                x_start, x_stop = pixel_span(
                    crossings[k], crossings[k + 1] - crossings[k], width
                )
                bits[py, x_start:x_stop] = True
    return BinaryMask(bits)


def decode_rle(counts: list[int], width: int, height: int) -> BinaryMask:
    """Decode uncompressed run-length counts (column-major, leading background run)."""
    total = width * height
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if run < 0:
            raise RoarError(f"negative run length {run}")
        flat[pos : pos + run] = value
        pos += run
        value = not value
    if pos != total:
        raise RoarError(f"run lengths sum to {pos}, expected {total}")
    # column-major: index i maps to (row i % h, col i // h)
    return BinaryMask(flat.reshape(width, height).T)


def rasterize_annotation(segmentation, width: int, height: int) -> BinaryMask:
    """Rasterize a COCO segmentation field (polygon list or uncompressed RLE dict)."""
    if segmentation is None:
        raise RoarError("annotation has no segmentation data")
    if isinstance(segmentation, dict):
        counts = segmentation.get("counts")
        size = segmentation.get("size")
        if not isinstance(counts, list):
            raise RoarError("only uncompressed run-length counts are supported")
        if size is not None and tuple(size) != (height, width):
            raise DimensionMismatchError(
                f"run-length size {size} does not match image {height}x{width}"
            )
        return decode_rle(counts, width, height)
    if isinstance(segmentation, list):
        return rasterize_polygons(segmentation, width, height)
    raise RoarError(f"unsupported segmentation type {type(segmentation).__name__}")


def dilate(m: BinaryMask, radius: float) -> BinaryMask:
    """Grow the mask by a Euclidean disc: output true where some input pixel lies
    within distance <= radius."""
    if radius < 0:
        raise RoarError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or not m.bits.any():
        return m
    dist = ndimage.distance_transform_edt(~m.bits)
    return BinaryMask(dist <= radius)


def union(masks: list[BinaryMask]) -> BinaryMask:
    """Pixelwise OR. All masks must share dimensions."""
    if not masks:
        raise RoarError("union of zero masks is undefined; pass at least one")
    shape = masks[0].bits.shape
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.bits.shape != shape:
            raise DimensionMismatchError(
                f"mask shape {m.bits.shape} does not match {shape}"
            )
        out |= m.bits
    return BinaryMask(out)


def composite(i: ImageBuffer, m: BinaryMask, g: ImageBuffer) -> ImageBuffer:
    """Select g where the mask is true and i elsewhere. Bit-exact, no blending."""
    if (i.height, i.width) != (m.height, m.width) or i.data.shape != g.data.shape:
        raise DimensionMismatchError(
            f"composite operands disagree: image {i.data.shape}, "
            f"mask {m.bits.shape}, fill {g.data.shape}"
        )
    return ImageBuffer(np.where(m.bits[:, :, None], g.data, i.data))


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when the union is degenerate.

    Areas are computed from corner differences so intersection and union stay
    consistent under floating point and identical boxes score exactly 1.
    """
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    inter = max(0.0, min(ax2, bx2) - max(a.x, b.x)) * max(
        0.0, min(ay2, by2) - max(a.y, b.y)
    )
    area_a = (ax2 - a.x) * (ay2 - a.y)
    area_b = (bx2 - b.x) * (by2 - b.y)
    union_area = area_a + area_b - inter
    if union_area <= 0:
        return 0.0
    return inter / union_area


def bbox_mask_iou(b: BBox, m: BinaryMask) -> float:
    """Pixel-level IoU between a box and a mask.

    The box occupies the pixels whose centers fall inside it (clipped to the
    mask extent). Any shared pixel makes the value strictly positive, so the
    aggressive zero-threshold collision test reduces to one-pixel overlap.
    """
    x0, x1 = pixel_span(b.x, b.w, m.width)
    y0, y1 = pixel_span(b.y, b.h, m.height)
    box_pixels = (x1 - x0) * (y1 - y0)
    mask_pixels = m.area
    inter = int(m.bits[y0:y1, x0:x1].sum()) if box_pixels > 0 else 0
    denom = box_pixels + mask_pixels - inter
    if denom <= 0:
        return 0.0
    return inter / denom
