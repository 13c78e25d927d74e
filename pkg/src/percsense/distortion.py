"""Sphere-noise distortion, clipping and RMSE-based pair filtering.

Reproducibility scheme: every pair gets its own 64-bit seed derived from the
run seed and the reference image id via ``derive_pair_seed`` (blake2b over
``"<seed>\\x1f<image_id>"``, little-endian digest).  Batch distortion is
therefore independent of worker count and iteration order.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import (DIST_SUFFIX, RANGE_SYMMETRIC, ImagePair, ImageTensor,
                   rmse_unit_range)
from .errors import ValidationError
from .validation import check_positive

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistortionConfig:
    """Noise radius, RNG seed and RMSE filter band.

    ``epsilon`` is an L2 radius in canonical-range units; ``rmse_min`` and
    ``rmse_max`` are thresholds in [0,1]-range units.  The two are deliberately
    independent knobs: with d-dimensional sphere noise and no clipping the
    resulting RMSE is epsilon / (2 * sqrt(d)).
    """

    epsilon: float
    seed: int
    rmse_min: float = 0.0
    rmse_max: float | None = None

    def __post_init__(self):
        check_positive(self.epsilon, "epsilon")
        if self.rmse_min < 0:
            raise ValidationError("rmse_min must be >= 0")
        if self.rmse_max is not None and self.rmse_max <= self.rmse_min:
            raise ValidationError("rmse_max must exceed rmse_min")


def derive_pair_seed(seed: int, image_id: str) -> int:
    """Stable 64-bit per-pair seed from the run seed and an image id."""
    digest = hashlib.blake2b(
        f"{seed}\x1f{image_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def sample_sphere_noise(dim: int, epsilon: float, seed: int) -> np.ndarray:
    """Uniform sample on the sphere of radius ``epsilon`` in ``dim`` dimensions.

    Draws ``dim`` standard normals and rescales to the target norm, which is
    exactly uniform on the sphere and needs no rejection step.
    """
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    check_positive(epsilon, "epsilon")
    rng = np.random.Generator(np.random.PCG64(seed))
    while True:
        direction = rng.standard_normal(dim)
        norm = np.linalg.norm(direction)
        if norm > 0.0:
            return direction * (epsilon / norm)


def distort(x: ImageTensor, cfg: DistortionConfig, pair_seed: int,
            pair_id: str | None = None) -> ImagePair:
    """Add sphere noise to a canonical-range image and clip back to [-1, 1].

    The recorded RMSE is computed after clipping, in [0,1]-range units.
    """
    if x.range != RANGE_SYMMETRIC:
        raise ValidationError("distort expects canonical [-1,1] images")
    noise = sample_sphere_noise(x.size, cfg.epsilon, pair_seed)
    distorted_data = np.clip(x.data + noise, -1.0, 1.0)
    distorted = ImageTensor(distorted_data, x.height, x.width, x.channels, x.range)
    return ImagePair(
        reference=x,
        distorted=distorted,
        epsilon=cfg.epsilon,
        rmse=rmse_unit_range(x, distorted),
        pair_id=pair_id if pair_id is not None else "pair",
    )


def distort_images(images, cfg: DistortionConfig, threads: int = 1):
    """Distort ``(image_id, ImageTensor)`` items; one pair per image.

    Results are ordered like the input and bit-identical for any ``threads``.
    """
    items = list(images)

    def one(item):
        image_id, tensor = item
        return distort(tensor, cfg, derive_pair_seed(cfg.seed, image_id), image_id)

    if threads <= 1:
        return [one(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, items))


def filter_pairs(pairs, cfg: DistortionConfig):
    """Keep pairs with rmse > rmse_min (and < rmse_max when set), in order."""
    pairs = list(pairs)
    kept = [
        p for p in pairs
        if p.rmse > cfg.rmse_min
        and (cfg.rmse_max is None or p.rmse < cfg.rmse_max)
    ]
    log.info("filter_pairs kept %d of %d pairs (rmse_min=%g, rmse_max=%s)",
             len(kept), len(pairs), cfg.rmse_min, cfg.rmse_max)
    return kept


def distorted_id(image_id: str) -> str:
    return image_id + DIST_SUFFIX
