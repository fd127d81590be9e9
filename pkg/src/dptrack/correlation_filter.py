"""Kernelized correlation filter with a Gaussian kernel.

Responses are indexed by circular shift: entry ``[m, n]`` scores the target
displaced by ``m`` rows and ``n`` columns (modulo the map size) from the
patch center.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .features import FeaturePatch, extract_features

__all__ = [
    "Filter",
    "ResponseStats",
    "UninformativeResponse",
    "gaussian_labels",
    "label_sigma",
    "kernel_correlation",
    "train",
    "respond",
    "update",
    "response_stats",
    "peak_shift",
    "wrapped_offsets",
    "sample_response",
    "extract_features",
    "FeaturePatch",
]


class UninformativeResponse(ValueError):
    """Raised when a response map has no positive mass."""


@dataclass(frozen=True)
class Filter:
    alphaf_num: np.ndarray
    alphaf_den: np.ndarray
    template: FeaturePatch
    labels: np.ndarray
    lam: float = 1e-4
    kernel_sigma: float = 0.5
    learn_rate: float = 0.02
    label_sigma: float = float("nan")

    @property
    def alphaf(self):
        return self.alphaf_num / self.alphaf_den


@dataclass(frozen=True)
class ResponseStats:
    peak_pos: tuple
    peak_value: float
    weighted_variance: float
    peak_index: tuple


def _as_channels(x):
    if isinstance(x, FeaturePatch):
        return x.channels
    arr = np.asarray(x, dtype=float)
    return arr[:, :, None] if arr.ndim == 2 else arr


def wrapped_offsets(n):
    """Signed circular offsets ``0, 1, ..., -2, -1`` for an axis of length n."""
    idx = np.arange(n)
    return (idx + n // 2) % n - n // 2


def gaussian_labels(height, width, sigma):
    """Periodic Gaussian peaked at index (0, 0)."""
    if height < 1 or width < 1:
        raise ValueError("label dimensions must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dy = np.minimum(np.arange(height), height - np.arange(height))
    dx = np.minimum(np.arange(width), width - np.arange(width))
    return np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2.0 * sigma**2))


def label_sigma(target_size, cell_size, factor=0.1):
    """Label bandwidth in cells: ``factor * sqrt(w * h) / cell_size``."""
    return factor * np.sqrt(target_size[0] * target_size[1]) / cell_size


def kernel_correlation(x, z, sigma):
    """Gaussian kernel between ``z`` and every circular shift of ``x``.

    ``out[m, n] = exp(-||roll(x, (-m, -n)) - z||^2 / (sigma^2 * N))`` with N
    the number of feature elements.
    """
    xc, zc = _as_channels(x), _as_channels(z)
    if xc.shape != zc.shape:
        raise ValueError(f"shape mismatch: {xc.shape} vs {zc.shape}")
    if sigma <= 0:
        raise ValueError("kernel sigma must be positive")
    xf = np.fft.fft2(xc, axes=(0, 1))
    zf = np.fft.fft2(zc, axes=(0, 1))
    cross = np.real(np.fft.ifft2(np.sum(xf * np.conj(zf), axis=2)))
    dist = np.maximum(np.sum(xc**2) + np.sum(zc**2) - 2.0 * cross, 0.0)
    return np.exp(-dist / (sigma**2 * xc.size))


def train(patch, labels, lam=1e-4, kernel_sigma=0.5, learn_rate=0.02, sigma_label=float("nan")):
    labels = np.asarray(labels, dtype=float)
    if labels.shape != patch.shape:
        raise ValueError(f"labels {labels.shape} do not match patch {patch.shape}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not 0.0 <= learn_rate <= 1.0:
        raise ValueError("learn_rate must lie in [0, 1]")
    kzz = kernel_correlation(patch, patch, kernel_sigma)
    return Filter(
        alphaf_num=np.fft.fft2(labels),
        alphaf_den=np.fft.fft2(kzz) + lam,
        template=patch,
        labels=labels,
        lam=lam,
        kernel_sigma=kernel_sigma,
        learn_rate=learn_rate,
        label_sigma=sigma_label,
    )


def respond(filt, patch):
    """Filter response over all circular shifts of ``patch``."""
    kyz = kernel_correlation(patch, filt.template, filt.kernel_sigma)
    return np.real(np.fft.ifft2(filt.alphaf * np.fft.fft2(kyz)))


def update(filt, patch, rate=None):
    """Blend numerator, denominator and template toward values fresh from ``patch``."""
    rate = filt.learn_rate if rate is None else rate
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    if rate == 0.0:
        return filt
    fresh = train(patch, filt.labels, filt.lam, filt.kernel_sigma, filt.learn_rate, filt.label_sigma)
    if rate == 1.0:
        return fresh
    template = FeaturePatch(
        (1 - rate) * filt.template.channels + rate * patch.channels,
        patch.cell_size,
        patch.origin,
        patch.windowed,
    )
    return replace(
        filt,
        alphaf_num=(1 - rate) * filt.alphaf_num + rate * fresh.alphaf_num,
        alphaf_den=(1 - rate) * filt.alphaf_den + rate * fresh.alphaf_den,
        template=template,
    )


def _subpixel(prev, center, nxt):
    denom = prev - 2.0 * center + nxt
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (prev - nxt) / denom, -0.5, 0.5))


def peak_shift(response):
    """Integer argmax and its sub-pixel (row, col) shift in cells.

    Ties go to the smallest row-major index; the refinement is a separable
    quadratic fit through the peak and its wrapped neighbors.
    """
    r = np.asarray(response, dtype=float)
    h, w = r.shape
    m, n = np.unravel_index(np.argmax(r), r.shape)
    dy = _subpixel(r[(m - 1) % h, n], r[m, n], r[(m + 1) % h, n]) if h > 2 else 0.0
    dx = _subpixel(r[m, (n - 1) % w], r[m, n], r[m, (n + 1) % w]) if w > 2 else 0.0
    return (int(m), int(n)), (wrapped_offsets(h)[m] + dy, wrapped_offsets(w)[n] + dx)


def response_stats(response, search_origin=(0.0, 0.0), cell_size=1):
    """Peak position, peak value and response-weighted spread around the peak.

    ``search_origin`` is the (x, y) image point of zero shift. Positions and
    the variance are in pixels (cells scaled by ``cell_size``).
    """
    r = np.asarray(response, dtype=float)
    h, w = r.shape
    mass = np.maximum(r, 0.0)
    total = mass.sum()
    if not total > 0:
        raise UninformativeResponse("response has no positive mass")
    (m, n), (shift_y, shift_x) = peak_shift(r)
    peak_pos = (
        float(search_origin[0] + shift_x * cell_size),
        float(search_origin[1] + shift_y * cell_size),
    )
    # offsets of every cell from the integer peak, wrapped around the torus
    oy = wrapped_offsets(h)[(np.arange(h) - m) % h]
    ox = wrapped_offsets(w)[(np.arange(w) - n) % w]
    dist2 = (oy[:, None] ** 2 + ox[None, :] ** 2) * float(cell_size) ** 2
    variance = float(np.sum(mass * dist2) / total)
    return ResponseStats(peak_pos, float(r[m, n]), variance, (m, n))


def sample_response(response, shift):
    """Bilinear read of a response map at a (row, col) shift in cells, wrapping."""
    r = np.asarray(response, dtype=float)
    h, w = r.shape
    y, x = shift
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    fy, fx = y - y0, x - x0
    val = 0.0
    for oy, wy in ((0, 1 - fy), (1, fy)):
        for ox, wx in ((0, 1 - fx), (1, fx)):
            val += wy * wx * r[(y0 + oy) % h, (x0 + ox) % w]
    return float(val)
