import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from roar_scrub.errors import DimensionMismatchError, RoarError
from roar_scrub.imaging import ImageBuffer
from roar_scrub.quality import C1, ImageQualityReport, compare, psnr, scene_means, ssim

images_32 = hnp.arrays(dtype=np.uint8, shape=(32, 32, 3))


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
        assert math.isinf(psnr(img, img))

    def test_max_difference_is_zero_db(self):
        assert psnr(ImageBuffer.constant(8, 8, 0), ImageBuffer.constant(8, 8, 255)) == \
            pytest.approx(0.0)

    def test_uniform_sixteen_difference(self):
        a = ImageBuffer.constant(16, 16, 100)
        b = ImageBuffer.constant(16, 16, 116)
        assert psnr(a, b) == pytest.approx(10 * math.log10(255**2 / 256), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            psnr(ImageBuffer.constant(8, 8, 0), ImageBuffer.constant(8, 9, 0))

    @given(images_32, images_32)
    @settings(max_examples=40, deadline=None)
    def test_symmetric(self, a, b):
        pa = psnr(ImageBuffer(a), ImageBuffer(b))
        pb = psnr(ImageBuffer(b), ImageBuffer(a))
        assert pa == pb

    def test_strictly_decreasing_in_uniform_difference(self):
        base = ImageBuffer.constant(16, 16, 60)
        values = [
            psnr(base, ImageBuffer.constant(16, 16, 60 + d)) for d in (4, 8, 16, 32)
        ]
        assert all(x > y for x, y in zip(values, values[1:]))

    @given(images_32, images_32)
    @settings(max_examples=30, deadline=None)
    def test_flip_invariant(self, a, b):
        direct = psnr(ImageBuffer(a), ImageBuffer(b))
        flipped = psnr(ImageBuffer(a[:, ::-1]), ImageBuffer(b[:, ::-1]))
        assert direct == pytest.approx(flipped)


class TestSsim:
    def test_identical_is_exactly_one(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (24, 24, 3), dtype=np.uint8))
        assert ssim(img, img) == 1.0

    def test_constant_extremes_closed_form(self):
        a = ImageBuffer.constant(16, 16, 0)
        b = ImageBuffer.constant(16, 16, 255)
        assert ssim(a, b) == pytest.approx(C1 / (255**2 + C1), abs=1e-12)

    def test_too_small_image_errors(self):
        with pytest.raises(RoarError):
            ssim(ImageBuffer.constant(8, 8, 0), ImageBuffer.constant(8, 8, 0))

    @given(images_32, images_32)
    @settings(max_examples=30, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        v = ssim(ImageBuffer(a), ImageBuffer(b))
        assert v == pytest.approx(ssim(ImageBuffer(b), ImageBuffer(a)), abs=1e-12)
        assert -1.0 - 1e-9 <= v <= 1.0 + 1e-9

    @given(images_32, images_32)
    @settings(max_examples=25, deadline=None)
    def test_flip_invariant(self, a, b):
        direct = ssim(ImageBuffer(a), ImageBuffer(b))
        flipped = ssim(ImageBuffer(a[:, ::-1]), ImageBuffer(b[:, ::-1]))
        assert direct == pytest.approx(flipped, abs=1e-12)

    def test_matches_skimage_reference(self, rng):
        # independent implementation cross-check on the same configuration
        skimage = pytest.importorskip("skimage.metrics")
        a = rng.integers(0, 256, (48, 40), dtype=np.uint8)
        b = np.clip(a.astype(int) + rng.integers(-30, 30, a.shape), 0, 255).astype(np.uint8)
        expect = skimage.structural_similarity(
            a, b, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=255,
        )
        got = ssim(ImageBuffer(a[:, :, None]), ImageBuffer(b[:, :, None]))
        assert got == pytest.approx(expect, abs=5e-3)


class TestReportShapes:
    def test_compare_bundles_metrics(self, rng):
        img = ImageBuffer(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
        rep = compare(img, img)
        assert math.isinf(rep.psnr_db)
        assert rep.ssim == 1.0
        assert rep.as_dict()["psnr_db"] is None
        assert rep.as_dict()["psnr_infinite"] is True

    def test_scene_means(self):
        reports = [
            ImageQualityReport(psnr_db=30.0, ssim=0.9, lpips=0.2),
            ImageQualityReport(psnr_db=math.inf, ssim=1.0, lpips=0.0),
        ]
        means = scene_means(reports)
        assert means["psnr_db_mean"] == pytest.approx(30.0)
        assert means["identical_pairs"] == 1
        assert means["ssim_mean"] == pytest.approx(0.95)
        assert means["lpips_mean"] == pytest.approx(0.1)

    def test_scene_means_empty_errors(self):
        with pytest.raises(RoarError):
            scene_means([])
