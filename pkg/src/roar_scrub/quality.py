"""Pixel fidelity (PSNR) and structural similarity (SSIM) between 8-bit images.

PSNR pools squared error over every sample (all pixels, all channels). SSIM
uses the standard reference configuration: 11x11 Gaussian window with sigma
1.5, stability constants K1=0.01 and K2=0.03 at 8-bit dynamic range; RGB
inputs are reduced to luma first. Perceptual distance (LPIPS) is not computed
locally; route it through a remote backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, RoarError
from .imaging import ImageBuffer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DYNAMIC_RANGE = 255.0
C1 = (0.01 * DYNAMIC_RANGE) ** 2
C2 = (0.03 * DYNAMIC_RANGE) ** 2

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageQualityReport:
    psnr_db: float  # math.inf when the images are identical
    ssim: float
    lpips: float | None = None

    def as_dict(self) -> dict:
        return {
            "psnr_db": None if math.isinf(self.psnr_db) else self.psnr_db,
            "psnr_infinite": math.isinf(self.psnr_db),
            "ssim": self.ssim,
            "lpips": self.lpips,
        }


def _check_dims(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(
            f"images disagree: {a.data.shape} vs {b.data.shape}"
        )


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in decibels; infinite for identical images."""
    _check_dims(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE**2 / mse)


def _to_luma(img: ImageBuffer) -> np.ndarray:
    if img.channels == 1:
        return img.data[:, :, 0].astype(np.float64)
    return img.data.astype(np.float64) @ _LUMA


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural similarity over Gaussian-weighted local windows."""
    _check_dims(a, b)
    if a.height < SSIM_WINDOW or a.width < SSIM_WINDOW:
        raise RoarError(
            f"image {a.height}x{a.width} is smaller than the {SSIM_WINDOW}px SSIM window"
        )
    x = _to_luma(a)
    y = _to_luma(b)

    # truncate at the 11x11 window: radius 5 = (11 - 1) / 2 -> truncate 5/1.5
    def blur(arr: np.ndarray) -> np.ndarray:
        return ndimage.gaussian_filter(
            arr, SSIM_SIGMA, mode="reflect", truncate=(SSIM_WINDOW - 1) / 2 / SSIM_SIGMA
        )

    mu_x = blur(x)
    mu_y = blur(y)
    # identical arithmetic for variances and covariance keeps ssim(x, x) == 1 exactly
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y

    num = (2 * mu_x * mu_y + C1) * (2 * cov + C2)
    den = (mu_x**2 + mu_y**2 + C1) * (var_x + var_y + C2)
    return float(np.mean(num / den))


def compare(a: ImageBuffer, b: ImageBuffer, lpips: float | None = None) -> ImageQualityReport:
    return ImageQualityReport(psnr_db=psnr(a, b), ssim=ssim(a, b), lpips=lpips)


def scene_means(reports: list[ImageQualityReport]) -> dict:
    """Aggregate per-pair reports into scene-level means (PSNR up, SSIM up,
    LPIPS down). Infinite PSNR pairs are excluded from the PSNR mean and
    counted separately."""
    if not reports:
        raise RoarError("cannot aggregate zero quality reports")
    finite = [r.psnr_db for r in reports if not math.isinf(r.psnr_db)]
    lpips_vals = [r.lpips for r in reports if r.lpips is not None]
    return {
        "psnr_db_mean": float(np.mean(finite)) if finite else None,
        "identical_pairs": sum(1 for r in reports if math.isinf(r.psnr_db)),
        "ssim_mean": float(np.mean([r.ssim for r in reports])),
        "lpips_mean": float(np.mean(lpips_vals)) if lpips_vals else None,
        "pairs": len(reports),
    }
