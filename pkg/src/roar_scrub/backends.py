"""Pluggable inpainter/detector backends and deterministic reference implementations.

The reference inpainters are pure functions of their request: equal requests
yield byte-identical outputs, which makes every downstream pipeline stage
testable without a trained model. Backends that have no use for the text
prompt or the seed accept and discard them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, RoarError, UnsupportedMetricError
from .imaging import BBox, BinaryMask, ImageBuffer

DEFAULT_PROMPT = "generic background"

CONSTANT_FILL_VALUE = 127
LAPLACIAN_TOLERANCE = 0.5  # stop when no pixel moves by half an intensity level
LAPLACIAN_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class InpaintRequest:
    image: ImageBuffer
    mask: BinaryMask
    prompt: str = DEFAULT_PROMPT
    seed: int = 0

    def __post_init__(self):
        if (self.image.height, self.image.width) != (self.mask.height, self.mask.width):
            raise DimensionMismatchError(
                f"inpaint request image {self.image.height}x{self.image.width} "
                f"does not match mask {self.mask.height}x{self.mask.width}"
            )


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    category_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise RoarError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class BackendEndpoint:
    base_url: str
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.retries < 0:
            raise RoarError("retries must be >= 0")


class InpaintBackend:
    """Interface: fill the masked region of an image."""

    name = "abstract"

    def inpaint(self, req: InpaintRequest) -> ImageBuffer:
        raise NotImplementedError

    def lpips(self, a: ImageBuffer, b: ImageBuffer) -> float:
        raise UnsupportedMetricError(
            f"backend '{self.name}' has no perceptual-distance model; configure a remote endpoint"
        )


class DetectBackend:
    """Interface: detect objects in an image at a score threshold."""

    name = "abstract"

    def detect(
        self, image: ImageBuffer, score_threshold: float, image_id: int | None = None
    ) -> list[Detection]:
        raise NotImplementedError


def _filter_and_sort(dets: list[Detection], score_threshold: float) -> list[Detection]:
    if not 0.0 <= score_threshold <= 1.0:
        raise RoarError(f"score threshold must lie in [0, 1], got {score_threshold}")
    kept = [d for d in dets if d.score >= score_threshold]
    return sorted(kept, key=lambda d: -d.score)


class ConstantFillInpainter(InpaintBackend):
    """Masked pixels become mid-gray."""

    name = "constant"

    def inpaint(self, req: InpaintRequest) -> ImageBuffer:
        out = np.array(req.image.data)
        out[req.mask.bits] = CONSTANT_FILL_VALUE
        return ImageBuffer(out)


def _boundary_ring(mask: np.ndarray) -> np.ndarray:
    # one-pixel ring of unmasked pixels touching the mask (8-connected)
    grown = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
    return grown & ~mask


class BorderMeanInpainter(InpaintBackend):
    """Masked pixels become the per-channel mean of the mask's boundary ring."""

    name = "border-mean"

    def inpaint(self, req: InpaintRequest) -> ImageBuffer:
        out = np.array(req.image.data)
        if not req.mask.bits.any():
            return ImageBuffer(out)
        ring = _boundary_ring(req.mask.bits)
        source = out[ring] if ring.any() else out.reshape(-1, out.shape[2])
        fill = np.rint(source.mean(axis=0)).astype(np.uint8)
        out[req.mask.bits] = fill
        return ImageBuffer(out)


class LaplacianFillInpainter(InpaintBackend):
    """Harmonic fill: masked pixels are iteratively replaced by the average of
    their in-bounds 4-neighbors until the largest per-pixel change drops below
    half an intensity level. The result obeys the discrete maximum principle:
    filled values stay inside [min, max] of the boundary ring."""

    name = "laplacian"

    def inpaint(self, req: InpaintRequest) -> ImageBuffer:
        mask = req.mask.bits
        out = np.array(req.image.data)
        if not mask.any():
            return ImageBuffer(out)
        ring = _boundary_ring(mask)
        for ch in range(out.shape[2]):
            plane = out[:, :, ch].astype(np.float64)
            init = plane[ring].mean() if ring.any() else float(CONSTANT_FILL_VALUE)
            plane[mask] = init
            for _ in range(LAPLACIAN_MAX_SWEEPS):
                nb_sum = np.zeros_like(plane)
                nb_cnt = np.zeros_like(plane)
                nb_sum[1:, :] += plane[:-1, :]
                nb_cnt[1:, :] += 1
                nb_sum[:-1, :] += plane[1:, :]
                nb_cnt[:-1, :] += 1
                nb_sum[:, 1:] += plane[:, :-1]
                nb_cnt[:, 1:] += 1
                nb_sum[:, :-1] += plane[:, 1:]
                nb_cnt[:, :-1] += 1
                updated = nb_sum[mask] / nb_cnt[mask]
                delta = np.abs(updated - plane[mask]).max()
                plane[mask] = updated
                if delta < LAPLACIAN_TOLERANCE:
                    break
            out[:, :, ch][mask] = np.rint(plane[mask]).clip(0, 255).astype(np.uint8)
        return ImageBuffer(out)


REFERENCE_INPAINTERS = {
    "constant": ConstantFillInpainter,
    "border-mean": BorderMeanInpainter,
    "laplacian": LaplacianFillInpainter,
}


class ReplayDetector(DetectBackend):
    """Replays a fixed detection list per image id; the desk-scale oracle."""

    name = "replay"

    def __init__(self, detections_by_image: dict[int, list[Detection]]):
        self._by_image = detections_by_image

    @classmethod
    def from_results(cls, results: list[dict]) -> "ReplayDetector":
        """Build from a COCO results list: [{image_id, category_id, bbox, score}]."""
        by_image: dict[int, list[Detection]] = {}
        for rec in results:
            det = Detection(
                bbox=BBox(*(float(v) for v in rec["bbox"])),
                category_id=int(rec["category_id"]),
                score=float(rec["score"]),
            )
            by_image.setdefault(int(rec["image_id"]), []).append(det)
        return cls(by_image)

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayDetector":
        with open(path, "rb") as fh:
            results = json.load(fh)
        if not isinstance(results, list):
            raise RoarError("replay file must be a COCO results list")
        return cls.from_results(results)

    def detect(
        self, image: ImageBuffer, score_threshold: float, image_id: int | None = None
    ) -> list[Detection]:
        if image_id is None:
            raise RoarError("replay detector needs an image id to look up its fixture")
        return _filter_and_sort(self._by_image.get(image_id, []), score_threshold)


def make_reference_inpainter(name: str) -> InpaintBackend:
    try:
        return REFERENCE_INPAINTERS[name]()
    except KeyError:
        raise RoarError(
            f"unknown reference inpainter '{name}'; choose from {sorted(REFERENCE_INPAINTERS)}"
        ) from None
