"""Stitching-based scrubbing for multi-view scenes.

One view (the one with the largest masked instance) is inpainted by a backend
and its filled patch is propagated to every other view: resized to that view's
mask extent, histogram-matched against the surrounding ring so color stays
coherent, then blended under a Gaussian-feathered alpha map. Cross-view
geometry is deliberately not modeled; coherence comes from reusing one patch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .backends import InpaintBackend, InpaintRequest, DEFAULT_PROMPT
from .errors import RoarError
from .imaging import BBox, BinaryMask, ImageBuffer, composite, pixel_span

RESIZE_FILTERS = {
    "bilinear": Image.BILINEAR,
    "nearest": Image.NEAREST,
    "bicubic": Image.BICUBIC,
}


@dataclass(frozen=True)
class StitchConfig:
    ring_width: int = 8
    blur_sigma: float = 3.0
    resize_filter: str = "bilinear"

    def __post_init__(self):
        if self.ring_width < 1:
            raise RoarError("ring_width must be >= 1")
        if self.blur_sigma < 0:
            raise RoarError("blur_sigma must be >= 0")
        if self.resize_filter not in RESIZE_FILTERS:
            raise RoarError(
                f"unknown resize filter '{self.resize_filter}'; "
                f"choose from {sorted(RESIZE_FILTERS)}"
            )


@dataclass(frozen=True)
class SceneManifest:
    name: str
    views: tuple[tuple[Path, Path], ...]  # (image path, mask path) per view
    train_test_split: float = 0.9
    seed: int = 42

    def __post_init__(self):
        if len(self.views) < 2:
            raise RoarError(f"scene '{self.name}' needs at least 2 views")
        if not 0.0 < self.train_test_split <= 1.0:
            raise RoarError("train_test_split must lie in (0, 1]")


@dataclass(frozen=True)
class SceneResult:
    outputs: tuple[ImageBuffer, ...]
    template_index: int
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]


def load_manifest(path: str | Path) -> SceneManifest:
    """Read a scene manifest JSON; view paths are resolved against its directory."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = json.load(fh)
    base = path.parent
    try:
        views = tuple(
            (base / v["image"], base / v["mask"]) for v in doc["views"]
        )
        return SceneManifest(
            name=str(doc["name"]),
            views=views,
            train_test_split=float(doc.get("split_fraction", 0.9)),
            seed=int(doc.get("seed", 42)),
        )
    except KeyError as e:
        raise RoarError(f"scene manifest missing field {e}") from None


def select_template(masks: list[BinaryMask]) -> int:
    """Index of the view whose mask covers the most pixels; ties go low."""
    areas = [m.area for m in masks]
    if not areas or max(areas) == 0:
        raise RoarError("no view has a non-empty mask; nothing to scrub")
    return int(np.argmax(areas))


def mask_bbox(mask: BinaryMask) -> BBox:
    ys, xs = np.nonzero(mask.bits)
    if len(xs) == 0:
        raise RoarError("cannot take the bounding box of an empty mask")
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    return BBox(x0, y0, x1 - x0, y1 - y0)


def _match_levels(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Monotone 8-bit remap sending the source distribution onto the reference's:
    level v maps to the smallest level whose reference CDF reaches the source
    CDF at v."""
    src_cdf = np.cumsum(np.bincount(src.ravel(), minlength=256)) / src.size
    ref_cdf = np.cumsum(np.bincount(ref.ravel(), minlength=256)) / ref.size
    mapping = np.searchsorted(ref_cdf, src_cdf, side="left")
    return np.clip(mapping, 0, 255).astype(np.uint8)[src]


def histogram_match(patch: ImageBuffer, reference: ImageBuffer) -> ImageBuffer:
    """Per-channel CDF matching of the patch onto the reference distribution."""
    return ImageBuffer(match_pixels(patch.data, reference.data))


def match_pixels(patch: np.ndarray, reference: np.ndarray) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.uint8)
    reference = np.asarray(reference, dtype=np.uint8)
    if reference.size == 0:
        raise RoarError("histogram reference is empty")
    channels = patch.shape[-1]
    if reference.shape[-1] != channels:
        raise RoarError(
            f"channel mismatch: patch has {channels}, reference has {reference.shape[-1]}"
        )
    out = np.empty_like(patch)
    flat_ref = reference.reshape(-1, channels)
    for ch in range(channels):
        out[..., ch] = _match_levels(patch[..., ch], flat_ref[:, ch])
    return out


def feather_alpha(height: int, width: int, box: tuple[int, int, int, int], sigma: float) -> np.ndarray:
    """Blend weights for pasting into pixel box (x0, y0, x1, y1): 1 deep inside
    the box, falling smoothly to 0 outward. The box is first shrunk by about
    two sigma per side (never to nothing), then the indicator is blurred with
    a Gaussian truncated at three sigma, so the support stays finite."""
    x0, y0, x1, y1 = box
    alpha = np.zeros((height, width), dtype=np.float64)
    if sigma == 0:
        alpha[y0:y1, x0:x1] = 1.0
        return alpha
    shrink_x = min(int(round(2 * sigma)), max((x1 - x0 - 1) // 2, 0))
    shrink_y = min(int(round(2 * sigma)), max((y1 - y0 - 1) // 2, 0))
    alpha[y0 + shrink_y : y1 - shrink_y, x0 + shrink_x : x1 - shrink_x] = 1.0
    return ndimage.gaussian_filter(alpha, sigma, mode="constant", truncate=3.0)


def _resize(patch: ImageBuffer, width: int, height: int, filter_name: str) -> np.ndarray:
    resized = patch.to_pil().resize((width, height), RESIZE_FILTERS[filter_name])
    arr = np.asarray(resized, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def stitch(
    target: ImageBuffer,
    target_bbox: BBox,
    template_patch: ImageBuffer,
    cfg: StitchConfig = StitchConfig(),
) -> ImageBuffer:
    """Blend the template patch into the target over target_bbox.

    The patch is resized to the box, histogram-matched against the ring of
    target pixels around the box (ring_width wide), and alpha-composited with
    feathered weights. Pixels outside the box are returned byte-identical.
    """
    x0, x1 = pixel_span(target_bbox.x, target_bbox.w, target.width)
    y0, y1 = pixel_span(target_bbox.y, target_bbox.h, target.height)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        raise RoarError(f"target bbox {target_bbox} covers no pixels")
    if template_patch.data.size == 0:
        raise RoarError("template patch is empty")
    if template_patch.channels != target.channels:
        raise RoarError("patch and target must share channel count")

    resized = _resize(template_patch, x1 - x0, y1 - y0, cfg.resize_filter)

    rx0 = max(0, x0 - cfg.ring_width)
    ry0 = max(0, y0 - cfg.ring_width)
    rx1 = min(target.width, x1 + cfg.ring_width)
    ry1 = min(target.height, y1 + cfg.ring_width)
    ring_mask = np.zeros((target.height, target.width), dtype=bool)
    ring_mask[ry0:ry1, rx0:rx1] = True
    ring_mask[y0:y1, x0:x1] = False
    if ring_mask.any():
        reference = target.data[ring_mask]
        resized = match_pixels(resized, reference)

    alpha = feather_alpha(target.height, target.width, (x0, y0, x1, y1), cfg.blur_sigma)
    canvas = np.array(target.data, dtype=np.float64)
    canvas[y0:y1, x0:x1] = resized
    blended = alpha[:, :, None] * canvas + (1.0 - alpha[:, :, None]) * target.data.astype(
        np.float64
    )
    return ImageBuffer(np.rint(blended).clip(0, 255).astype(np.uint8))


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Seeded shuffle split; the test side gets floor(n * (1 - fraction)) views."""
    n_test = math.floor(n * (1.0 - train_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    test = sorted(int(i) for i in perm[:n_test])
    train = sorted(int(i) for i in perm[n_test:])
    return tuple(train), tuple(test)


def scrub_scene(
    scene: SceneManifest,
    inpainter: InpaintBackend,
    cfg: StitchConfig = StitchConfig(),
    prompt: str = DEFAULT_PROMPT,
) -> SceneResult:
    """Scrub every view of a scene via template inpainting plus stitching.

    The template view is inpainted by the backend and recomposited so pixels
    outside its mask stay untouched; other views receive the template patch.
    Views with an empty mask pass through unchanged.
    """
    images = [ImageBuffer.load(img) for img, _ in scene.views]
    masks = [BinaryMask.load(msk) for _, msk in scene.views]
    for i, (img, msk) in enumerate(zip(images, masks)):
        if (img.height, img.width) != (msk.height, msk.width):
            raise RoarError(
                f"view {i}: mask {msk.height}x{msk.width} does not match "
                f"image {img.height}x{img.width}"
            )

    template_idx = select_template(masks)
    template_img = images[template_idx]
    template_mask = masks[template_idx]
    try:
        raw = inpainter.inpaint(
            InpaintRequest(
                image=template_img, mask=template_mask, prompt=prompt, seed=scene.seed
            )
        )
        template_out = composite(template_img, template_mask, raw)
    except Exception as e:
        raise RoarError(f"inpainting failed on template view {template_idx}: {e}") from e

    tb = mask_bbox(template_mask)
    tx0, tx1 = pixel_span(tb.x, tb.w, template_out.width)
    ty0, ty1 = pixel_span(tb.y, tb.h, template_out.height)
    patch = ImageBuffer(template_out.data[ty0:ty1, tx0:tx1])

    outputs: list[ImageBuffer] = []
    for i, (img, msk) in enumerate(zip(images, masks)):
        if i == template_idx:
            outputs.append(template_out)
        elif not msk.bits.any():
            outputs.append(img)
        else:
            outputs.append(stitch(img, mask_bbox(msk), patch, cfg))

    train, test = split_indices(len(images), scene.train_test_split, scene.seed)
    return SceneResult(
        outputs=tuple(outputs),
        template_index=template_idx,
        train_indices=train,
        test_indices=test,
    )
