"""Perceptual distances and their sensitivities.

Built-in distances
------------------
``ms_ssim``
    1 - MS-SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
    evaluated in [0,1] space.  The canonical five scale weights
    (0.0448, 0.2856, 0.3001, 0.2363, 0.1333) are truncated to the requested
    scale count and renormalized to sum 1; three scales is the default, which
    is what 32-pixel inputs admit.  When a scale is smaller than the window,
    the window shrinks to the largest odd size that fits (the usual
    small-image adaptation); the coarsest scale must keep at least 3 pixels
    per side.  Downsampling is 2x2 mean pooling.

``nlpd``
    A bandpass pyramid distance with divisive normalization.  L levels
    (lowpass residual included, default 4) built with the 5-tap binomial
    filter [1,4,6,4,1]/16 and 2x2 mean pooling; each band is divided by
    ``c + box3(|band|)`` where ``c = max(0.17 * rms(band), 1e-3)`` is adaptive
    per band and per image.  The distance is the mean over levels of the RMSE
    between normalized bands.  Computed in canonical [-1,1] space.

Both distances are computed per channel and averaged, and are exactly
symmetric in their two arguments.  All pooling/filters are symmetric, so
spatially flipping both inputs leaves the values unchanged on even-sized
images.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import (RANGE_UNIT, ImagePair, ImageTensor, SensitivityRow,
                   SensitivityTable, convert_range)
from .errors import UndefinedSensitivityError, ValidationError
from .validation import check_same_shape

log = logging.getLogger(__name__)

MSSSIM_CANONICAL_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

MSSSIM_DEFAULTS = {"scales": 3, "window": 11, "sigma": 1.5, "k1": 0.01, "k2": 0.03}
NLPD_DEFAULTS = {"levels": 4, "c_scale": 0.17, "c_floor": 1e-3}

BUILTIN_KINDS = ("builtin-msssim", "builtin-nlpd", "builtin-rmse")


@dataclass(frozen=True)
class MetricSpec:
    """A named distance: builtin with parameters, or an external CSV."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BUILTIN_KINDS + ("external-file",):
            raise ValidationError(f"unknown metric kind {self.kind!r}")
        if self.kind == "external-file" and "path" not in self.params:
            raise ValidationError("external-file metric needs params['path']")

    def resolved_params(self):
        base = {}
        if self.kind == "builtin-msssim":
            base = dict(MSSSIM_DEFAULTS)
        elif self.kind == "builtin-nlpd":
            base = dict(NLPD_DEFAULTS)
        base.update(self.params)
        return base


def _gaussian_kernel(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _valid_sep_filter(img, kernel):
    """Separable 'valid' convolution along both spatial axes."""
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 0, img)
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 1, out)
    return out


def _pool2(img):
    """2x2 mean pooling; odd trailing rows/columns are dropped."""
    h, w = img.shape
    h2, w2 = h - h % 2, w - w % 2
    c = img[:h2, :w2]
    return 0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2])


def _ssim_terms(x, y, window, sigma, k1, k2):
    """Mean luminance term and mean contrast-structure term for one channel."""
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    size = min(window, x.shape[0], x.shape[1])
    if size % 2 == 0:
        size -= 1
    kernel = _gaussian_kernel(size, sigma)
    mu_x = _valid_sep_filter(x, kernel)
    mu_y = _valid_sep_filter(y, kernel)
    xx = _valid_sep_filter(x * x, kernel) - mu_x * mu_x
    yy = _valid_sep_filter(y * y, kernel) - mu_y * mu_y
    xy = _valid_sep_filter(x * y, kernel) - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2.0 * xy + c2) / (xx + yy + c2)
    cs = np.maximum(cs, 0.0)
    return float(np.mean(lum)), float(np.mean(cs))


def ms_ssim(x: ImageTensor, y: ImageTensor, params=None) -> float:
    """1 - MS-SSIM, in [0, 1], symmetric in its arguments."""
    check_same_shape(x, y)
    p = dict(MSSSIM_DEFAULTS)
    p.update(params or {})
    scales = int(p["scales"])
    if scales < 1 or scales > len(MSSSIM_CANONICAL_WEIGHTS):
        raise ValidationError(f"scales must be in 1..5, got {scales}")
    coarsest = min(x.height, x.width) // (2 ** (scales - 1))
    if coarsest < 3:
        raise ValidationError(
            f"image {x.height}x{x.width} too small for {scales} scales"
        )
    weights = np.array(MSSSIM_CANONICAL_WEIGHTS[:scales])
    weights = weights / weights.sum()

    xu = convert_range(x, RANGE_UNIT).as_hwc()
    yu = convert_range(y, RANGE_UNIT).as_hwc()
    per_channel = []
    for c in range(x.channels):
        xa, ya = xu[:, :, c], yu[:, :, c]
        msssim = 1.0
        for s in range(scales):
            lum, cs = _ssim_terms(xa, ya, int(p["window"]), float(p["sigma"]),
                                  float(p["k1"]), float(p["k2"]))
            if s == scales - 1:
                msssim *= max(lum, 0.0) ** weights[s] * cs ** weights[s]
            else:
                msssim *= cs ** weights[s]
                xa, ya = _pool2(xa), _pool2(ya)
        per_channel.append(1.0 - msssim)
    return float(np.mean(per_channel))


def _binomial5_blur(img):
    """Separable [1,4,6,4,1]/16 blur with symmetric padding."""
    kernel = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    padded = np.pad(img, 2, mode="symmetric")
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 0, padded)
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 1, out)
    return out


def _pool2_ceil(img):
    """2x2 mean pooling with duplicated edge for odd sizes."""
    h, w = img.shape
    if h % 2:
        img = np.concatenate([img, img[-1:, :]], axis=0)
    if w % 2:
        img = np.concatenate([img, img[:, -1:]], axis=1)
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _upsample_nearest(img, shape):
    up = np.repeat(np.repeat(img, 2, axis=0), 2, axis=1)
    return up[: shape[0], : shape[1]]


def _box3(img):
    padded = np.pad(img, 1, mode="symmetric")
    kernel = np.ones(3) / 3.0
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 0, padded)
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 1, out)
    return out


def _laplacian_pyramid(img, levels):
    bands = []
    current = img
    for _ in range(levels - 1):
        down = _pool2_ceil(_binomial5_blur(current))
        up = _binomial5_blur(_upsample_nearest(down, current.shape))
        bands.append(current - up)
        current = down
    bands.append(current)
    return bands


def _normalize_band(band, c_scale, c_floor):
    rms = float(np.sqrt(np.mean(band * band)))
    c = max(c_scale * rms, c_floor)
    return band / (c + _box3(np.abs(band)))


def nlpd(x: ImageTensor, y: ImageTensor, params=None) -> float:
    """Normalized bandpass-pyramid distance; zero for identical inputs."""
    check_same_shape(x, y)
    p = dict(NLPD_DEFAULTS)
    p.update(params or {})
    levels = int(p["levels"])
    if levels < 1:
        raise ValidationError("levels must be >= 1")
    if min(x.height, x.width) < 2 ** levels:
        raise ValidationError(
            f"image {x.height}x{x.width} too small for {levels} pyramid levels"
        )
    xa, ya = x.as_hwc(), y.as_hwc()
    per_channel = []
    for c in range(x.channels):
        bx = _laplacian_pyramid(xa[:, :, c], levels)
        by = _laplacian_pyramid(ya[:, :, c], levels)
        level_rmse = []
        for band_x, band_y in zip(bx, by):
            nx = _normalize_band(band_x, float(p["c_scale"]), float(p["c_floor"]))
            ny = _normalize_band(band_y, float(p["c_scale"]), float(p["c_floor"]))
            diff = nx - ny
            level_rmse.append(np.sqrt(np.mean(diff * diff)))
        per_channel.append(np.mean(level_rmse))
    return float(np.mean(per_channel))


def euclidean_rmse(x: ImageTensor, y: ImageTensor) -> float:
    """RMSE in [0,1]-range units."""
    check_same_shape(x, y)
    diff = x.data - y.data
    scale = 2.0 if x.range != RANGE_UNIT else 1.0
    return float(np.sqrt(np.mean(diff * diff)) / scale)


def sensitivity(distance: float, x: ImageTensor, xt: ImageTensor) -> float:
    """Distance per unit of canonical-range Euclidean distortion."""
    denom = float(np.linalg.norm(x.data - xt.data))
    if denom == 0.0:
        raise UndefinedSensitivityError(
            "sensitivity is undefined for identical images"
        )
    return distance / denom


def evaluate_builtin(spec: MetricSpec, pair: ImagePair) -> SensitivityRow:
    params = spec.resolved_params()
    if spec.kind == "builtin-msssim":
        d = ms_ssim(pair.reference, pair.distorted, params)
    elif spec.kind == "builtin-nlpd":
        d = nlpd(pair.reference, pair.distorted, params)
    elif spec.kind == "builtin-rmse":
        d = euclidean_rmse(pair.reference, pair.distorted)
    else:
        raise ValidationError(f"{spec.kind!r} is not a builtin metric")
    return SensitivityRow(
        pair_id=pair.pair_id,
        metric=spec.name,
        distance=d,
        rmse=pair.rmse,
        sensitivity=sensitivity(d, pair.reference, pair.distorted),
    )


def evaluate_metric(spec: MetricSpec, pairs) -> SensitivityTable:
    table = SensitivityTable()
    for pair in pairs:
        table.add(evaluate_builtin(spec, pair))
    return table


def pair_geometry(pairs):
    """Map pair_id -> (rmse, dimension) from :class:`ImagePair` objects."""
    return {p.pair_id: (p.rmse, p.reference.size) for p in pairs}


def manifest_pair_geometry(manifest):
    """Same mapping built from a manifest's pair entries (no payload reads)."""
    geometry = {}
    for p in manifest.pairs:
        e = manifest.entry(p.reference)
        geometry[p.pair_id] = (p.rmse, e.height * e.width * e.channels)
    return geometry


def ingest_external_distances(path, metric_name, geometry) -> SensitivityTable:
    """Join a ``pair_id,distance`` CSV with known pair geometry.

    ``geometry`` maps pair_id -> (rmse, dimension); the sensitivity
    denominator is reconstructed as ||x - xt||_2 = rmse * 2 * sqrt(d).
    Unknown ids, duplicates and negative distances are errors; pairs missing
    from the file are reported as a warning listing their ids.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["pair_id", "distance"]:
            raise ValidationError(
                f"external distances {path} must have header pair_id,distance"
            )
        seen = set()
        table = SensitivityTable()
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 cells")
            pair_id, cell = row
            if pair_id not in geometry:
                raise ValidationError(f"{path}:{lineno}: unknown pair_id {pair_id!r}")
            if pair_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate row for {pair_id!r}")
            seen.add(pair_id)
            try:
                distance = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: distance {cell!r} is not a number"
                ) from None
            if distance < 0:
                raise ValidationError(
                    f"{path}:{lineno}: negative distance {distance} for {pair_id!r}"
                )
            rmse, dim = geometry[pair_id]
            denom = rmse * 2.0 * np.sqrt(dim)
            if denom == 0.0:
                raise UndefinedSensitivityError(
                    f"pair {pair_id!r} has zero rmse; sensitivity undefined"
                )
            table.add(SensitivityRow(
                pair_id=pair_id, metric=metric_name, distance=distance,
                rmse=rmse, sensitivity=distance / denom,
            ))
    missing = sorted(set(geometry) - seen)
    if missing:
        log.warning("external distances %s missing %d pair(s): %s",
                    path, len(missing), ", ".join(missing))
    return table
