import numpy as np
import pytest

from percsense.data import ImageTensor
from percsense.distortion import DistortionConfig, distort
from percsense.errors import UndefinedSensitivityError, ValidationError
from percsense.metrics import (MSSSIM_CANONICAL_WEIGHTS, MetricSpec,
                               euclidean_rmse, evaluate_builtin,
                               ingest_external_distances, ms_ssim, nlpd,
                               pair_geometry, sensitivity)


def image(values, h=16, w=16, c=3):
    return ImageTensor(np.asarray(values, dtype=np.float64), h, w, c)


def random_pair(seed, h=16, w=16, c=3, epsilon=0.4):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = ImageTensor(rng.uniform(-0.6, 0.6, h * w * c), h, w, c)
    return distort(x, DistortionConfig(epsilon=epsilon, seed=0), pair_seed=seed,
                   pair_id=f"p{seed}")


def flipped(img):
    hwc = img.as_hwc()[::-1, ::-1, :]
    return ImageTensor(hwc.ravel(), img.height, img.width, img.channels)


class TestMsSsim:
    def test_identity(self):
        p = random_pair(0)
        assert ms_ssim(p.reference, p.reference) == 0.0

    def test_symmetry(self):
        p = random_pair(1)
        d1 = ms_ssim(p.reference, p.distorted)
        d2 = ms_ssim(p.distorted, p.reference)
        assert abs(d1 - d2) <= 1e-12

    def test_constant_image_luminance_closed_form(self):
        # Constant images: contrast-structure terms are exactly 1 at every
        # scale, so the distance reduces to the coarsest-scale luminance
        # comparison raised to its weight.  Hand oracle in [0,1] units.
        x = image(np.zeros(16 * 16 * 3))          # 0.5 in [0,1]
        y = image(np.full(16 * 16 * 3, 0.1))      # 0.55 in [0,1]
        mu_x, mu_y, c1 = 0.5, 0.55, (0.01 * 1.0) ** 2
        lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
        weights = np.array(MSSSIM_CANONICAL_WEIGHTS[:3])
        weights = weights / weights.sum()
        expected = 1.0 - lum ** weights[-1]
        assert ms_ssim(x, y) == pytest.approx(expected, rel=1e-9)

    def test_range_is_unit_interval(self):
        for seed in range(5):
            p = random_pair(seed, epsilon=2.0)
            d = ms_ssim(p.reference, p.distorted)
            assert 0.0 <= d <= 1.0

    def test_too_small_for_scales(self):
        x = image(np.zeros(4 * 4 * 3), 4, 4, 3)
        with pytest.raises(ValidationError, match="too small"):
            ms_ssim(x, x, {"scales": 3})

    def test_flip_stability(self):
        p = random_pair(2)
        d = ms_ssim(p.reference, p.distorted)
        d_flipped = ms_ssim(flipped(p.reference), flipped(p.distorted))
        assert abs(d - d_flipped) <= 1e-9

    def test_shape_mismatch(self):
        a = image(np.zeros(16 * 16 * 3))
        b = image(np.zeros(8 * 8 * 3), 8, 8, 3)
        with pytest.raises(ValidationError):
            ms_ssim(a, b)


class TestNlpd:
    def test_identity(self):
        p = random_pair(3)
        assert nlpd(p.reference, p.reference) == 0.0

    def test_symmetry(self):
        p = random_pair(4)
        d1 = nlpd(p.reference, p.distorted)
        d2 = nlpd(p.distorted, p.reference)
        assert abs(d1 - d2) <= 1e-12

    def test_positive_for_different_inputs(self):
        p = random_pair(5)
        assert nlpd(p.reference, p.distorted) > 0.0

    def test_constant_images_hand_pyramid(self):
        # Bandpass bands of constants vanish; only the lowpass residual
        # differs.  Scalar oracle with the same normalization constants,
        # in the regime where the c floor is active.
        v1, v2, levels = 0.002, 0.004, 4
        x = image(np.full(16 * 16 * 3, v1))
        y = image(np.full(16 * 16 * 3, v2))

        def norm_const(v):
            c = max(0.17 * abs(v), 1e-3)
            return v / (c + abs(v))

        expected = abs(norm_const(v1) - norm_const(v2)) / levels
        assert nlpd(x, y) == pytest.approx(expected, rel=1e-9)

    def test_constant_images_adaptive_regime(self):
        # Above the floor the adaptive constant saturates the lowpass ratio,
        # so two bright constants normalize identically.
        x = image(np.full(16 * 16 * 3, 0.25))
        y = image(np.full(16 * 16 * 3, 0.75))
        assert nlpd(x, y) == pytest.approx(0.0, abs=1e-12)

    def test_too_small_for_levels(self):
        x = image(np.zeros(8 * 8 * 3), 8, 8, 3)
        with pytest.raises(ValidationError, match="too small"):
            nlpd(x, x, {"levels": 4})

    def test_flip_stability(self):
        p = random_pair(6)
        d = nlpd(p.reference, p.distorted)
        d_flipped = nlpd(flipped(p.reference), flipped(p.distorted))
        assert abs(d - d_flipped) <= 1e-9


class TestEuclideanRmse:
    def test_identity(self):
        p = random_pair(7)
        assert euclidean_rmse(p.reference, p.reference) == 0.0

    def test_full_range(self):
        a = image(np.full(16 * 16 * 3, -1.0))
        b = image(np.full(16 * 16 * 3, 1.0))
        assert euclidean_rmse(a, b) == 1.0

    def test_brute_force_oracle(self):
        p = random_pair(8)
        total = 0.0
        for u, v in zip(p.reference.data, p.distorted.data):
            total += (u - v) ** 2
        expected = (total / p.reference.size) ** 0.5 / 2.0
        assert euclidean_rmse(p.reference, p.distorted) == pytest.approx(
            expected, rel=1e-12)


class TestSensitivity:
    def test_self_ratio_is_one(self):
        p = random_pair(9)
        l2 = p.l2_distance()
        assert sensitivity(l2, p.reference, p.distorted) == pytest.approx(1.0)

    def test_zero_distance_is_zero(self):
        p = random_pair(10)
        assert sensitivity(0.0, p.reference, p.distorted) == 0.0

    def test_identical_images_rejected(self):
        p = random_pair(11)
        with pytest.raises(UndefinedSensitivityError):
            sensitivity(0.1, p.reference, p.reference)

    def test_rows_recompute(self):
        for name, kind in (("msssim", "builtin-msssim"),
                           ("nlpd", "builtin-nlpd"),
                           ("rmse", "builtin-rmse")):
            spec = MetricSpec(name, kind)
            for seed in range(5):
                p = random_pair(seed + 20)
                row = evaluate_builtin(spec, p)
                assert row.sensitivity * p.l2_distance() == pytest.approx(
                    row.distance, rel=1e-9)


class TestExternalDistances:
    def _geometry(self, n=4):
        return {f"p{i}": (0.002 * (i + 1), 768) for i in range(n)}

    def _write(self, tmp_path, rows):
        path = tmp_path / "ext.csv"
        lines = ["pair_id,distance"] + [f"{pid},{d}" for pid, d in rows]
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    def test_full_join(self, tmp_path):
        geometry = self._geometry()
        path = self._write(tmp_path, [(f"p{i}", 0.1 * (i + 1)) for i in range(4)])
        table = ingest_external_distances(path, "pim", geometry)
        assert len(table.rows) == 4
        row = table.for_metric("pim")["p1"]
        denom = 0.004 * 2 * np.sqrt(768)
        assert row.sensitivity == pytest.approx(0.2 / denom)

    def test_missing_ids_warn_with_names(self, tmp_path, caplog):
        geometry = self._geometry()
        path = self._write(tmp_path, [("p0", 0.1)])
        with caplog.at_level("WARNING"):
            table = ingest_external_distances(path, "pim", geometry)
        assert len(table.rows) == 1
        assert "p1, p2, p3" in caplog.text

    def test_negative_distance_names_row(self, tmp_path):
        path = self._write(tmp_path, [("p0", -0.1)])
        with pytest.raises(ValidationError, match="p0"):
            ingest_external_distances(path, "pim", self._geometry())

    def test_unknown_id_rejected(self, tmp_path):
        path = self._write(tmp_path, [("mystery", 0.1)])
        with pytest.raises(ValidationError, match="mystery"):
            ingest_external_distances(path, "pim", self._geometry())

    def test_duplicate_rejected(self, tmp_path):
        path = self._write(tmp_path, [("p0", 0.1), ("p0", 0.2)])
        with pytest.raises(ValidationError, match="duplicate"):
            ingest_external_distances(path, "pim", self._geometry())

    def test_geometry_from_pairs(self):
        p = random_pair(30)
        geometry = pair_geometry([p])
        assert geometry[p.pair_id] == (p.rmse, p.reference.size)


class TestMetricSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            MetricSpec("x", "builtin-vmaf")

    def test_external_needs_path(self):
        with pytest.raises(ValidationError):
            MetricSpec("pim", "external-file")

    def test_params_resolved_with_defaults(self):
        spec = MetricSpec("msssim", "builtin-msssim", {"scales": 2})
        params = spec.resolved_params()
        assert params["scales"] == 2 and params["window"] == 11
