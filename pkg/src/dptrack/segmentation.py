"""Global color model: HSV histograms, Bayes backprojection and smoothing."""
from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from .features import crop

__all__ = [
    "ColorModel",
    "SegmentationResult",
    "quantize_hsv",
    "build_histogram",
    "annulus_histogram",
    "backproject",
    "regularize",
    "informativeness",
    "color_probability",
    "update_model",
    "segment",
    "initial_model",
]

DEFAULT_BINS = (16, 16, 16)
# OpenCV 8-bit HSV ranges: hue in [0, 180), saturation and value in [0, 256)
_HSV_RANGE = (180, 256, 256)


@dataclass(frozen=True)
class ColorModel:
    fg_hist: np.ndarray
    bg_hist: np.ndarray
    prior_fg: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.prior_fg < 1.0:
            raise ValueError("prior_fg must lie in (0, 1)")
        if self.fg_hist.shape != self.bg_hist.shape:
            raise ValueError("histogram shapes differ")

    @property
    def bins(self):
        return self.fg_hist.shape


@dataclass(frozen=True)
class SegmentationResult:
    posterior: np.ndarray
    mask: np.ndarray
    fg_count: int
    alpha_col: float


def _to_rgb8(image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0 if img.max() <= 1.0 else img), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3])


def quantize_hsv(image, bins=DEFAULT_BINS):
    """Flat histogram bin index of every pixel of an RGB image."""
    hsv = cv2.cvtColor(_to_rgb8(image), cv2.COLOR_RGB2HSV).astype(np.int64)
    idx = [np.minimum(hsv[..., c] * bins[c] // _HSV_RANGE[c], bins[c] - 1) for c in range(3)]
    return (idx[0] * bins[1] + idx[1]) * bins[2] + idx[2]


def _box_bounds(region, shape):
    x, y, w, h = region
    x0, y0 = max(int(round(x)), 0), max(int(round(y)), 0)
    x1, y1 = min(int(round(x + w)), shape[1]), min(int(round(y + h)), shape[0])
    return x0, y0, x1, y1


def _counts(codes, bins):
    return np.bincount(codes.ravel(), minlength=int(np.prod(bins))).astype(float)


def build_histogram(image, region, bins=DEFAULT_BINS):
    """Normalized HSV histogram of the pixels inside ``region`` = (x, y, w, h)."""
    x0, y0, x1, y1 = _box_bounds(region, np.shape(image))
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"region {region} does not intersect the image")
    counts = _counts(quantize_hsv(np.asarray(image)[y0:y1, x0:x1], bins), bins)
    return (counts / counts.sum()).reshape(bins)


def annulus_histogram(image, region, factor=1.6, bins=DEFAULT_BINS):
    """Histogram of the ring between ``region`` and ``region`` scaled by ``factor``.

    Falls back to a uniform histogram when the ring holds no image pixels.
    """
    x, y, w, h = region
    cx, cy = x + w / 2.0, y + h / 2.0
    outer = (cx - factor * w / 2.0, cy - factor * h / 2.0, factor * w, factor * h)
    shape = np.shape(image)
    ox0, oy0, ox1, oy1 = _box_bounds(outer, shape)
    counts = np.zeros(int(np.prod(bins)))
    if ox1 > ox0 and oy1 > oy0:
        codes = quantize_hsv(np.asarray(image)[oy0:oy1, ox0:ox1], bins)
        ix0, iy0, ix1, iy1 = _box_bounds(region, shape)
        ring = np.ones(codes.shape, dtype=bool)
        ring[max(iy0 - oy0, 0) : max(iy1 - oy0, 0), max(ix0 - ox0, 0) : max(ix1 - ox0, 0)] = False
        counts = _counts(codes[ring], bins)
    if counts.sum() == 0:
        return np.full(bins, 1.0 / np.prod(bins))
    return (counts / counts.sum()).reshape(bins)


def initial_model(image, region, surround_factor=1.6, bins=DEFAULT_BINS, prior_fg=0.5):
    return ColorModel(
        build_histogram(image, region, bins),
        annulus_histogram(image, region, surround_factor, bins),
        prior_fg,
    )


def backproject(image, region, model):
    """Per-pixel foreground posterior over a search window.

    ``region`` = (x, y, w, h) selects the window; pixels outside the image
    replicate the border. Colors with zero likelihood under both models get
    ``model.prior_fg``.
    """
    x, y, w, h = region
    window = crop(_to_rgb8(image), (x + w / 2.0, y + h / 2.0), (int(round(w)), int(round(h))))
    codes = quantize_hsv(window, model.bins)
    pf = model.prior_fg * model.fg_hist.ravel()[codes]
    pb = (1.0 - model.prior_fg) * model.bg_hist.ravel()[codes]
    denom = pf + pb
    post = np.full(codes.shape, float(model.prior_fg))
    ok = denom > 0
    post[ok] = pf[ok] / denom[ok]
    return post


def regularize(posterior, iterations=3):
    """Iterated blend of each value with the mean of its 4-neighborhood.

    Borders replicate, so constant fields are fixed points and values stay
    in the input range.
    """
    p = np.asarray(posterior, dtype=float)
    for _ in range(iterations):
        q = np.pad(p, 1, mode="edge")
        neighbors = (q[:-2, 1:-1] + q[2:, 1:-1] + q[1:-1, :-2] + q[1:-1, 2:]) / 4.0
        p = 0.5 * p + 0.5 * neighbors
    return p


def informativeness(fg_count, prev_size, alpha_min=0.2, alpha_max=2.0, low=0.1):
    """Weight of the uniform floor in the color map: ``low`` when the mask size is plausible."""
    if prev_size <= 0:
        raise ValueError("prev_size must be positive")
    ratio = fg_count / prev_size
    return low if alpha_min < ratio < alpha_max else 1.0


def color_probability(posterior, alpha_col):
    return np.asarray(posterior, dtype=float) * (1.0 - alpha_col) + alpha_col


def update_model(model, fg_region, surround_factor, image, rate=0.05, gate=True):
    """Blend both histograms toward fresh ones when ``gate`` is set."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    if not gate or rate == 0.0:
        return model
    fg = build_histogram(image, fg_region, model.bins)
    bg = annulus_histogram(image, fg_region, surround_factor, model.bins)
    fg_new = (1 - rate) * model.fg_hist + rate * fg
    bg_new = (1 - rate) * model.bg_hist + rate * bg
    # renormalize so rounding never accumulates over long sequences
    return replace(model, fg_hist=fg_new / fg_new.sum(), bg_hist=bg_new / bg_new.sum())


def segment(
    image,
    region,
    model,
    prev_size,
    threshold=0.5,
    iterations=3,
    alpha_min=0.2,
    alpha_max=2.0,
    low=0.1,
):
    """Backproject, smooth, binarize and run the informativeness test."""
    posterior = regularize(backproject(image, region, model), iterations)
    mask = posterior > threshold
    fg_count = int(mask.sum())
    alpha = informativeness(fg_count, prev_size, alpha_min, alpha_max, low)
    return SegmentationResult(posterior, mask, fg_count, alpha)
