import math

import numpy as np
import pytest

from percsense.data import DIST_SUFFIX, ImagePair, ImageTensor
from percsense.density import (ExternalLogProbTable, GaussianDensity,
                               bits_per_dim_to_nats, descriptor_record,
                               fit_gaussian, nats_to_bits_per_dim,
                               path_integral_logp)
from percsense.errors import CapabilityError, ValidationError


def standard_normal_model(d):
    return GaussianDensity.from_params(np.zeros(d), np.eye(d))


def random_model(seed, d=6):
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.standard_normal((d, d))
    cov = a @ a.T + d * np.eye(d)
    return GaussianDensity.from_params(rng.standard_normal(d), cov), rng


class TestFit:
    def test_monte_carlo_mean_recovery(self):
        rng = np.random.Generator(np.random.PCG64(0))
        X = rng.standard_normal((10_000, 8))
        model = fit_gaussian(X, alpha=0.1)
        assert np.all(np.abs(model.mean_) <= 0.05)

    def test_repeated_image_alpha_one_is_spherical(self):
        X = np.tile(np.linspace(-0.5, 0.5, 12), (5, 1))
        model = fit_gaussian(X, alpha=1.0)
        assert np.allclose(model.chol_, np.eye(12))
        assert math.isfinite(model.log_prob(X[0]))

    def test_alpha_zero_rank_deficient_fails_cholesky(self):
        X = np.tile(np.linspace(-0.5, 0.5, 12), (5, 1))
        with pytest.raises(ValidationError, match="positive definite"):
            fit_gaussian(X, alpha=0.0)

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            fit_gaussian(np.zeros((1, 4)), alpha=0.5)

    def test_save_load_round_trip(self, tmp_path):
        model, rng = random_model(1)
        path = str(tmp_path / "model.npz")
        model.save(path)
        loaded = GaussianDensity.load(path)
        x = rng.standard_normal(6)
        assert loaded.log_prob(x) == model.log_prob(x)


class TestLogProb:
    def test_standard_normal_at_mean(self):
        for d in (1, 4, 16):
            model = standard_normal_model(d)
            assert model.log_prob(np.zeros(d)) == pytest.approx(
                -0.5 * d * math.log(2 * math.pi), rel=1e-12)

    def test_unit_gaussian_one_sigma_point(self):
        model = standard_normal_model(1)
        assert model.log_prob([1.0]) == pytest.approx(-1.418939, abs=1e-6)

    def test_dense_solve_oracle(self):
        model, rng = random_model(2)
        cov = model.chol_ @ model.chol_.T
        inv = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        for _ in range(20):
            x = rng.standard_normal(6) * 3
            delta = x - model.mean_
            expected = -0.5 * (6 * math.log(2 * math.pi) + logdet
                               + delta @ inv @ delta)
            assert model.log_prob(x) == pytest.approx(expected, rel=1e-9)

    def test_dimension_mismatch(self):
        model = standard_normal_model(4)
        with pytest.raises(ValidationError, match="dimension"):
            model.log_prob(np.zeros(5))


class TestGradient:
    def test_zero_at_mean(self):
        model, _ = random_model(3)
        assert np.allclose(model.grad_log_prob(model.mean_), 0.0)

    def test_isotropic_closed_form(self):
        model = GaussianDensity.from_params(np.zeros(4), 2.0 * np.eye(4))
        e1 = np.array([1.0, 0, 0, 0])
        assert np.allclose(model.grad_log_prob(e1), -0.5 * e1)

    def test_finite_difference_oracle(self):
        model, rng = random_model(4)
        h = 1e-4
        for _ in range(100):
            x = rng.standard_normal(6) * 2
            grad = model.grad_log_prob(x)
            fd = np.zeros(6)
            for i in range(6):
                step = np.zeros(6)
                step[i] = h
                fd[i] = (model.log_prob(x + step) - model.log_prob(x - step)) / (2 * h)
            assert np.linalg.norm(fd - grad) <= 1e-4 * max(np.linalg.norm(grad), 1.0)


class TestPathIntegral:
    def _closed_form(self, model, x, xt):
        cov = model.chol_ @ model.chol_.T
        inv = np.linalg.inv(cov)
        u = xt - x
        delta = x - model.mean_
        a = -0.5 * u @ inv @ u
        b = -u @ inv @ delta
        c = model.log_prob(x)
        return c + b / 2.0 + a / 3.0

    def test_degenerate_segment(self):
        model, rng = random_model(5)
        x = rng.standard_normal(6)
        assert path_integral_logp(model, x, x, 16) == model.log_prob(x)

    def test_closed_form_oracle_at_64_steps(self):
        model, rng = random_model(6)
        for _ in range(10):
            x = rng.standard_normal(6)
            xt = x + rng.standard_normal(6) * 0.2
            value = path_integral_logp(model, x, xt, 64)
            assert value == pytest.approx(self._closed_form(model, x, xt),
                                          rel=1e-6)

    def test_halving_steps_reduces_error(self):
        model, rng = random_model(7)
        x = rng.standard_normal(6)
        xt = x + rng.standard_normal(6)
        exact = self._closed_form(model, x, xt)
        errors = [abs(path_integral_logp(model, x, xt, n) - exact)
                  for n in (4, 8, 16, 32, 64)]
        assert all(errors[i + 1] <= errors[i] for i in range(len(errors) - 1))

    def test_requires_logp_capability(self):
        table = ExternalLogProbTable({"a": -1.0})
        with pytest.raises(CapabilityError):
            path_integral_logp(table, np.zeros(3), np.ones(3), 8)


def make_pair(rng, d=27, pair_id="img_0"):
    x = ImageTensor(rng.uniform(-0.5, 0.5, d), 3, 3, 3)
    xt_data = np.clip(x.data + rng.standard_normal(d) * 0.05, -1, 1)
    xt = ImageTensor(xt_data, 3, 3, 3)
    rmse = float(np.sqrt(np.mean((x.data - xt.data) ** 2)) / 2)
    return ImagePair(x, xt, 0.2, rmse, pair_id)


class TestDescriptorRecord:
    def test_constant_reference_stats(self):
        x = ImageTensor(np.zeros(27), 3, 3, 3)
        pair = ImagePair(x, x, 0.2, 0.0, "p")
        model = standard_normal_model(27)
        rec = descriptor_record(model, pair, n_steps=4)
        assert rec.mu_x == 0.5
        assert rec.sigma_x == 0.0

    def test_identical_pair_degeneracies(self):
        rng = np.random.Generator(np.random.PCG64(8))
        x = ImageTensor(rng.uniform(-0.5, 0.5, 27), 3, 3, 3)
        pair = ImagePair(x, x, 0.2, 0.0, "p")
        model = standard_normal_model(27)
        rec = descriptor_record(model, pair, n_steps=4)
        assert rec.dir_proj == 0.0
        assert rec.logp_xt == rec.logp_x
        assert rec.path_integral == rec.logp_x

    def test_dir_proj_dot_product_oracle(self):
        rng = np.random.Generator(np.random.PCG64(9))
        pair = make_pair(rng)
        model, _ = random_model(10, d=27)
        rec = descriptor_record(model, pair, n_steps=8)
        grad = model.grad_log_prob(pair.reference.data)
        expected = sum(
            (pair.reference.data[i] - pair.distorted.data[i]) * grad[i]
            for i in range(27)
        )
        assert rec.dir_proj == pytest.approx(expected, rel=1e-9)

    def test_mu_sigma_two_pass_oracle(self):
        rng = np.random.Generator(np.random.PCG64(11))
        pair = make_pair(rng)
        model = standard_normal_model(27)
        rec = descriptor_record(model, pair, n_steps=4)
        unit = [(v + 1) / 2 for v in pair.reference.data]
        mean = sum(unit) / len(unit)
        var = sum((u - mean) ** 2 for u in unit) / len(unit)
        assert rec.mu_x == pytest.approx(mean, abs=1e-12)
        assert rec.sigma_x == pytest.approx(math.sqrt(var), abs=1e-12)

    def test_grad_norms_nonnegative_and_match(self):
        rng = np.random.Generator(np.random.PCG64(12))
        pair = make_pair(rng)
        model, _ = random_model(13, d=27)
        rec = descriptor_record(model, pair, n_steps=4)
        assert rec.grad_norm_x == pytest.approx(
            np.linalg.norm(model.grad_log_prob(pair.reference.data)), rel=1e-12)
        assert rec.grad_norm_xt >= 0


class TestExternalTable:
    def test_csv_round_trip_bit_equal(self, tmp_path):
        path = tmp_path / "logp.csv"
        path.write_text(
            "image_id,logp_nats\nimg_0,-6388.027239195976\n"
            f"img_0{DIST_SUFFIX},-6390.5\n"
        )
        table = ExternalLogProbTable.from_csv(str(path))
        rng = np.random.Generator(np.random.PCG64(14))
        pair = make_pair(rng, pair_id="img_0")
        rec = descriptor_record(table, pair)
        assert rec.logp_x == -6388.027239195976
        assert rec.logp_xt == -6390.5
        assert rec.grad_norm_x is None
        assert rec.dir_proj is None
        assert rec.path_integral is None
        assert rec.mu_x is not None

    def test_missing_id_reported(self, tmp_path):
        path = tmp_path / "logp.csv"
        path.write_text("image_id,logp_nats\nimg_0,-1.0\n")
        table = ExternalLogProbTable.from_csv(str(path))
        rng = np.random.Generator(np.random.PCG64(15))
        pair = make_pair(rng, pair_id="img_1")
        with pytest.raises(ValidationError, match="img_1"):
            descriptor_record(table, pair)

    def test_gradient_payloads_fill_gradient_fields(self):
        rng = np.random.Generator(np.random.PCG64(16))
        pair = make_pair(rng, pair_id="img_0")
        gx = rng.standard_normal(27)
        gxt = rng.standard_normal(27)
        table = ExternalLogProbTable(
            {"img_0": -5.0, "img_0" + DIST_SUFFIX: -6.0},
            gradients={"img_0": gx, "img_0" + DIST_SUFFIX: gxt},
        )
        rec = descriptor_record(table, pair)
        assert rec.grad_norm_x == pytest.approx(np.linalg.norm(gx))
        assert rec.dir_proj == pytest.approx(
            (pair.reference.data - pair.distorted.data) @ gx)
        assert rec.path_integral is None

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "logp.csv"
        path.write_text("image_id,logp_nats\na,-1.0\na,-2.0\n")
        with pytest.raises(ValidationError, match="duplicate"):
            ExternalLogProbTable.from_csv(str(path))


class TestUnitConversion:
    def test_three_bits_per_dim(self):
        assert bits_per_dim_to_nats(3.0, 3072) == pytest.approx(-6388.03, abs=0.5)

    def test_inverse_composition(self):
        for bpd in (0.5, 3.0, 7.25):
            nats = bits_per_dim_to_nats(bpd, 3072)
            assert nats_to_bits_per_dim(nats, 3072) == pytest.approx(bpd, rel=1e-12)
