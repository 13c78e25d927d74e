"""Density models and the eight probability surrogates.

All log-probabilities are in nats.  ``GaussianDensity`` is a fully analytic
model (every surrogate has a closed form, which the tests lean on);
``ExternalLogProbTable`` carries log-probabilities produced elsewhere, keyed
by image id, with optional gradient payloads.  External tables cannot
evaluate off-sample points, so segment integrals (and gradients, when absent)
are emitted as missing values rather than imputed.
"""

import csv
import math
import os

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import DIST_SUFFIX, RANGE_SYMMETRIC, DescriptorRecord, ImagePair
from .errors import CapabilityError, ValidationError
from .validation import as_matrix

LN2 = math.log(2.0)


def bits_per_dim_to_nats(bits_per_dim, dim):
    """Convert a negative-log-likelihood in bits/dim to log-probability nats."""
    return -float(bits_per_dim) * dim * LN2


def nats_to_bits_per_dim(logp_nats, dim):
    return -float(logp_nats) / (dim * LN2)


class GaussianDensity(BaseEstimator):
    """Multivariate Gaussian with shrinkage-regularized covariance.

    fit(X) sets the mean to the sample mean and the covariance to
    ``(1 - alpha) * S + alpha * (trace(S)/d) * I`` where ``S`` is the sample
    covariance; the blend must admit a Cholesky factorization.  A degenerate
    ``trace(S) = 0`` (all rows identical) falls back to a unit shrinkage
    target so the model stays usable.
    """

    has_logp = True
    has_gradient = True

    def __init__(self, alpha=0.1):
        self.alpha = alpha

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y=None):
        # alpha = 0 is accepted but offers no rescue: rank-deficient data then
        # fails the Cholesky step below.
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        X = as_matrix(X, "X")
        n, d = X.shape
        if n < 2:
            raise ValidationError("fit requires at least 2 samples")
        mean = X.mean(axis=0)
        centered = X - mean
        cov = centered.T @ centered / (n - 1)
        scale = float(np.trace(cov)) / d
        if scale <= 0.0:
            scale = 1.0
        if self.alpha > 0.0:
            cov = (1.0 - self.alpha) * cov + self.alpha * scale * np.eye(d)
        self._set_params(mean, cov)
        return self

    def _set_params(self, mean, cov):
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise ValidationError(
                f"covariance is not positive definite: {exc}"
            ) from exc
        self.mean_ = np.asarray(mean, dtype=np.float64)
        self.chol_ = chol
        self.dim_ = self.mean_.size
        # log det Sigma = 2 * sum(log diag(L))
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return self

    @classmethod
    def from_params(cls, mean, cov, alpha=1.0):
        model = cls(alpha=alpha)
        return model._set_params(np.asarray(mean, dtype=np.float64),
                                 np.asarray(cov, dtype=np.float64))

    def _check_fitted(self):
        if not hasattr(self, "chol_"):
            raise NotFittedError("GaussianDensity is not fitted")

    def _check_dim(self, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.dim_:
            raise ValidationError(
                f"dimension mismatch: model has {self.dim_}, input has {x.size}"
            )
        return x

    # -- evaluation --------------------------------------------------------

    def log_prob(self, x):
        self._check_fitted()
        x = self._check_dim(x)
        z = linalg.solve_triangular(self.chol_, x - self.mean_, lower=True)
        return float(-0.5 * (self.dim_ * math.log(2.0 * math.pi)
                             + self._log_det + z @ z))

    def grad_log_prob(self, x):
        """Gradient of log-density: -Sigma^{-1} (x - mean)."""
        self._check_fitted()
        x = self._check_dim(x)
        return -linalg.cho_solve((self.chol_, True), x - self.mean_)

    def save(self, path):
        self._check_fitted()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, mean=self.mean_, chol=self.chol_, alpha=self.alpha)

    @classmethod
    def load(cls, path):
        with np.load(path) as blob:
            model = cls(alpha=float(blob["alpha"]))
            model.mean_ = blob["mean"].astype(np.float64)
            model.chol_ = blob["chol"].astype(np.float64)
        model.dim_ = model.mean_.size
        model._log_det = 2.0 * float(np.sum(np.log(np.diag(model.chol_))))
        return model


def fit_gaussian(X, alpha=0.1) -> GaussianDensity:
    return GaussianDensity(alpha=alpha).fit(X)


class ExternalLogProbTable:
    """Log-probabilities by image id, with optional gradient payloads.

    Built from the ``image_id,logp_nats`` interchange CSV.  Gradients, when
    provided, come as raw-float vector payloads referenced by image id.
    """

    has_logp = True

    def __init__(self, logprobs, gradients=None):
        self.logprobs = dict(logprobs)
        self.gradients = dict(gradients or {})
        for image_id, value in self.logprobs.items():
            if not math.isfinite(value):
                raise ValidationError(f"non-finite logp for image {image_id!r}")

    @property
    def has_gradient(self):
        return bool(self.gradients)

    @classmethod
    def from_csv(cls, path, gradients=None):
        if not os.path.exists(path):
            raise ValidationError(f"log-prob file not found: {path}")
        logprobs = {}
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["image_id", "logp_nats"]:
                raise ValidationError(
                    f"{path}: expected header image_id,logp_nats, got {header}"
                )
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected 2 cells")
                image_id, cell = row
                if image_id in logprobs:
                    raise ValidationError(
                        f"{path}:{lineno}: duplicate image id {image_id!r}"
                    )
                try:
                    logprobs[image_id] = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: logp {cell!r} is not a number"
                    ) from None
        return cls(logprobs, gradients)

    def log_prob_id(self, image_id):
        try:
            return self.logprobs[image_id]
        except KeyError:
            raise ValidationError(
                f"no log-probability on file for image {image_id!r}"
            ) from None

    def grad_for_id(self, image_id):
        if image_id not in self.gradients:
            raise CapabilityError(
                f"no gradient payload on file for image {image_id!r}"
            )
        return np.asarray(self.gradients[image_id], dtype=np.float64)


def path_integral_logp(model, x, xt, n_steps=64):
    """Average of log p along the straight segment from x to xt.

    Composite trapezoid over ``n_steps`` intervals of
    (1/1) * int_0^1 log p(x + t (xt - x)) dt; a degenerate segment returns
    log p(x) exactly.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    if not getattr(model, "has_logp", False) or not hasattr(model, "log_prob"):
        raise CapabilityError(
            "model cannot evaluate log-probability at interior points"
        )
    x = np.asarray(x, dtype=np.float64).ravel()
    xt = np.asarray(xt, dtype=np.float64).ravel()
    if np.array_equal(x, xt):
        return model.log_prob(x)
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    values = np.array([model.log_prob(x + t * (xt - x)) for t in ts])
    weights = np.full(n_steps + 1, 1.0 / n_steps)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return float(values @ weights)


def _pixel_stats_unit_range(img):
    """Mean and population std of a canonical image, in [0,1] units."""
    if img.range != RANGE_SYMMETRIC:
        raise ValidationError("expected canonical-range image")
    unit = (img.data + 1.0) / 2.0
    return float(np.mean(unit)), float(np.std(unit))


def descriptor_record(model, pair: ImagePair, n_steps=64) -> DescriptorRecord:
    """Fill the eight surrogates for one pair.

    The directional term keeps the (x - xt)^T J(x) sign convention.  With an
    id-keyed external table, gradients and the segment integral are emitted
    as missing when unsupported; mean and std always come from the reference
    pixels in [0,1] units.
    """
    x = pair.reference.data
    xt = pair.distorted.data
    mu_x, sigma_x = _pixel_stats_unit_range(pair.reference)

    if isinstance(model, ExternalLogProbTable):
        logp_x = model.log_prob_id(pair.pair_id)
        logp_xt = model.log_prob_id(pair.pair_id + DIST_SUFFIX)
        grad_norm_x = grad_norm_xt = dir_proj = path_integral = None
        if model.has_gradient:
            try:
                gx = model.grad_for_id(pair.pair_id)
                gxt = model.grad_for_id(pair.pair_id + DIST_SUFFIX)
            except CapabilityError:
                gx = gxt = None
            if gx is not None and gxt is not None:
                grad_norm_x = float(np.linalg.norm(gx))
                grad_norm_xt = float(np.linalg.norm(gxt))
                dir_proj = float((x - xt) @ gx)
    else:
        logp_x = model.log_prob(x)
        logp_xt = model.log_prob(xt)
        if getattr(model, "has_gradient", False):
            gx = model.grad_log_prob(x)
            gxt = model.grad_log_prob(xt)
            grad_norm_x = float(np.linalg.norm(gx))
            grad_norm_xt = float(np.linalg.norm(gxt))
            dir_proj = float((x - xt) @ gx)
        else:
            grad_norm_x = grad_norm_xt = dir_proj = None
        path_integral = path_integral_logp(model, x, xt, n_steps)

    return DescriptorRecord(
        pair_id=pair.pair_id,
        logp_x=logp_x,
        logp_xt=logp_xt,
        grad_norm_x=grad_norm_x,
        grad_norm_xt=grad_norm_xt,
        dir_proj=dir_proj,
        mu_x=mu_x,
        sigma_x=sigma_x,
        path_integral=path_integral,
    )


def descriptor_records(model, pairs, n_steps=64):
    return [descriptor_record(model, pair, n_steps) for pair in pairs]
