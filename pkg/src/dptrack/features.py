"""Image windows and HOG + grayscale feature maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["crop", "to_gray", "window_cells", "hog", "extract_features", "FeaturePatch"]


@dataclass
class FeaturePatch:
    """Multi-channel feature map ``(rows, cols, channels)`` on a cell grid.

    ``origin`` is the (x, y) image point the patch is centered on.
    """

    channels: np.ndarray
    cell_size: int = 1
    origin: tuple = (0.0, 0.0)
    windowed: bool = False

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim == 2:
            ch = ch[:, :, None]
        if ch.ndim != 3:
            raise ValueError("feature channels must be a 2D or 3D array")
        self.channels = ch

    @property
    def shape(self):
        return self.channels.shape[:2]


def to_gray(image):
    """Float grayscale in [0, 1] from an 8-bit (or float) gray or RGB image."""
    img = np.asarray(image)
    scale = 255.0 if img.dtype == np.uint8 else 1.0
    img = img.astype(float) / scale
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def crop(image, center, size):
    """Window of ``size`` = (width, height) pixels centered at (x, y).

    Pixels outside the image replicate the nearest border pixel. The window
    starts at ``floor(center - size / 2)``.
    """
    w, h = int(size[0]), int(size[1])
    x0 = int(np.floor(center[0] - w / 2.0))
    y0 = int(np.floor(center[1] - h / 2.0))
    xs = np.clip(np.arange(x0, x0 + w), 0, image.shape[1] - 1)
    ys = np.clip(np.arange(y0, y0 + h), 0, image.shape[0] - 1)
    return image[np.ix_(ys, xs)]


def window_cells(size, cell_size):
    """Round a (width, height) pixel size up to whole cells; returns (cols, rows)."""
    return tuple(int(np.ceil(s / cell_size)) for s in size)


def hann2d(rows, cols):
    return np.outer(np.hanning(rows), np.hanning(cols))


def hog(gray, cell_size=4, clip=0.2, eps=1e-4):
    """31-channel HOG (Felzenszwalb variant) of a grayscale image.

    Channels are 18 contrast-sensitive orientations, 9 contrast-insensitive
    orientations and 4 texture-energy features. ``gray`` must be padded by
    one pixel on every side; the returned map has
    ``((H - 2) // cell_size, (W - 2) // cell_size)`` cells.
    """
    gray = np.asarray(gray, dtype=float)
    gx = gray[1:-1, 2:] - gray[1:-1, :-2]
    gy = gray[2:, 1:-1] - gray[:-2, 1:-1]
    rows, cols = gx.shape[0] // cell_size, gx.shape[1] // cell_size
    gx = gx[: rows * cell_size, : cols * cell_size]
    gy = gy[: rows * cell_size, : cols * cell_size]
    mag = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2 * np.pi)

    # soft orientation binning into 18 bins over the full circle
    pos = angle / (2 * np.pi / 18)
    lo = np.floor(pos).astype(int) % 18
    hi = (lo + 1) % 18
    frac = pos - np.floor(pos)
    hist = np.zeros((rows, cols, 18))
    cell_r = (np.arange(rows * cell_size) // cell_size)[:, None]
    cell_c = (np.arange(cols * cell_size) // cell_size)[None, :]
    cell_idx = np.broadcast_to(cell_r * cols + cell_c, mag.shape).ravel()
    flat = hist.reshape(-1, 18)
    np.add.at(flat, (cell_idx, lo.ravel()), (mag * (1 - frac)).ravel())
    np.add.at(flat, (cell_idx, hi.ravel()), (mag * frac).ravel())

    unsigned = hist[:, :, :9] + hist[:, :, 9:]
    norm = np.sum(unsigned**2, axis=2)
    padded = np.pad(norm, 1, mode="edge")
    # block energies of the four 2x2 blocks containing each cell
    blocks = []
    for dr in (0, 1):
        for dc in (0, 1):
            b = (
                padded[dr : dr + rows, dc : dc + cols]
                + padded[dr + 1 : dr + 1 + rows, dc : dc + cols]
                + padded[dr : dr + rows, dc + 1 : dc + 1 + cols]
                + padded[dr + 1 : dr + 1 + rows, dc + 1 : dc + 1 + cols]
            )
            blocks.append(1.0 / np.sqrt(b + eps))

    sensitive = np.zeros((rows, cols, 18))
    insensitive = np.zeros((rows, cols, 9))
    texture = np.zeros((rows, cols, 4))
    for k, inv in enumerate(blocks):
        hs = np.minimum(hist * inv[:, :, None], clip)
        hu = np.minimum(unsigned * inv[:, :, None], clip)
        sensitive += 0.5 * hs
        insensitive += 0.5 * hu
        texture[:, :, k] = 0.2357 * hs.sum(axis=2)
    return np.concatenate([sensitive, insensitive, texture], axis=2)


def extract_features(image, center, size, cell_size=4, windowed=True):
    """HOG channels plus a cell-averaged, zero-mean grayscale channel.

    ``size`` is the (width, height) of the window in pixels, rounded up to
    whole cells. With ``windowed`` the map is multiplied by a Hann window.
    """
    cols, rows = window_cells(size, cell_size)
    if rows < 2 or cols < 2:
        raise ValueError(f"feature window of {size} px spans fewer than two cells of {cell_size} px")
    gray = to_gray(image)
    w, h = cols * cell_size, rows * cell_size
    padded = crop(gray, center, (w + 2, h + 2))
    feats = hog(padded, cell_size)
    inner = padded[1:-1, 1:-1]
    intensity = inner.reshape(rows, cell_size, cols, cell_size).mean(axis=(1, 3))
    intensity = intensity - intensity.mean()
    feats = np.concatenate([feats, intensity[:, :, None]], axis=2)
    if windowed:
        feats = feats * hann2d(rows, cols)[:, :, None]
    return FeaturePatch(feats, cell_size, (float(center[0]), float(center[1])), windowed)
