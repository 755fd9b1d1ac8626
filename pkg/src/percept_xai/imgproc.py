"""Deterministic image primitives used by the masking pipelines.

Conventions: an image is a numpy float array of shape (H, W, C) with C in
{1, 3}; a soft mask is an (H, W) float array. All sample values live in
[0, 1]. Every function is pure -- inputs are never mutated, and identical
inputs (including generator state) produce bit-identical outputs.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

# ITU-R BT.601 luminance weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

__all__ = [
    "LUMA_WEIGHTS",
    "as_image",
    "as_mask",
    "to_grayscale",
    "gaussian_kernel1d",
    "gaussian_blur",
    "canny_edges",
    "resize_bicubic",
    "random_resized_crop",
    "composite",
]


def as_image(arr: np.ndarray) -> np.ndarray:
    """Validate an (H, W, C) image with C in {1, 3} and values in [0, 1]."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty image")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def as_mask(arr: np.ndarray) -> np.ndarray:
    """Validate an (H, W) soft mask with values in [0, 1]."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) mask, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty mask")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ValueError("mask values must lie in [0, 1]")
    return arr


def luminance(img: np.ndarray) -> np.ndarray:
    """Per-pixel BT.601 luminance of a 3-channel image, as an (H, W) array."""
    img = as_image(img)
    if img.shape[2] != 3:
        raise ValueError("luminance requires a 3-channel image")
    r, g, b = LUMA_WEIGHTS
    return r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Grayscale transform; luminance is replicated into all 3 channels.

    Raises ValueError on single-channel input (already grayscale).
    """
    img = as_image(img)
    if img.shape[2] == 1:
        raise ValueError("already grayscale")
    lum = np.clip(luminance(img), 0.0, 1.0)
    return np.repeat(lum[:, :, None], 3, axis=2)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def _correlate1d_replicate(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along `axis` with replicated borders."""
    radius = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    out = np.zeros_like(arr)
    for offset, weight in enumerate(kernel):
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(offset, offset + arr.shape[axis])
        out += weight * padded[tuple(sl)]
    return out


def _blur2d(plane: np.ndarray, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel1d(sigma)
    return _correlate1d_replicate(_correlate1d_replicate(plane, kernel, 0), kernel, 1)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated borders; output in [0, 1]."""
    img = as_image(img)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = _blur2d(img[:, :, c], sigma)
    return np.clip(out, 0.0, 1.0)


def _sobel(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel gradients (d/dx along columns, d/dy along rows), replicate borders."""
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([1.0, 0.0, -1.0])
    gx = _correlate1d_replicate(_correlate1d_replicate(plane, smooth, 0), diff, 1)
    gy = _correlate1d_replicate(_correlate1d_replicate(plane, smooth, 1), diff, 0)
    return gx, gy


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Quantized non-maximum suppression along the gradient direction.

    Ties on a two-pixel plateau keep exactly one pixel: the candidate must
    strictly exceed its backward neighbor and be >= its forward neighbor.
    """
    h, w = mag.shape
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # Sector -> (dr, dc) step along the gradient.
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3

    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros(mag.shape, dtype=bool)
    for sec, (dr, dc) in offsets.items():
        fwd = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        back = padded[1 - dr : 1 - dr + h, 1 - dc : 1 - dc + w]
        in_sector = sector == sec
        keep |= in_sector & (mag >= fwd) & (mag > back)
    return keep & (mag > 0)


def canny_edges(
    img: np.ndarray,
    low_thresh: float = 0.1,
    high_thresh: float = 0.2,
    sigma: float = 1.4,
) -> np.ndarray:
    """Canny edge map: smooth, Sobel, NMS, double-threshold hysteresis.

    Thresholds apply to the gradient magnitude normalized by its maximum, so
    both must lie in [0, 1] with low < high. The binary result is replicated
    into 3 channels so encoders accept it unchanged.
    """
    if not (0.0 <= low_thresh < high_thresh <= 1.0):
        raise ValueError(
            f"thresholds must satisfy 0 <= low < high <= 1, got ({low_thresh}, {high_thresh})"
        )
    img = as_image(img)
    plane = luminance(img) if img.shape[2] == 3 else img[:, :, 0]
    smoothed = _blur2d(plane, sigma)
    gx, gy = _sobel(smoothed)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    thin = _nms(mag, gx, gy)
    strong = thin & (mag >= high_thresh)
    weak = thin & (mag >= low_thresh)
    # Hysteresis: keep weak chains 8-connected to at least one strong pixel.
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    edges = np.zeros(plane.shape, dtype=np.float64)
    if count:
        kept = np.unique(labels[strong])
        kept = kept[kept != 0]
        if kept.size:
            edges[np.isin(labels, kept)] = 1.0
    return np.repeat(edges[:, :, None], 3, axis=2)


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom interpolation kernel (Keys, a = -0.5)."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = 1.5 * t3 - 2.5 * t2 + 1.0
    far = -0.5 * t3 + 2.5 * t2 - 4.0 * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resample_axis(arr: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    old_len = arr.shape[axis]
    scale = old_len / new_len
    # Half-pixel centers; out-of-range taps clamp to the edge sample.
    centers = (np.arange(new_len, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64)
    frac = centers - base
    out = np.zeros((*arr.shape[:axis], new_len, *arr.shape[axis + 1 :]), dtype=arr.dtype)
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, old_len - 1)
        weights = _catmull_rom(frac - tap)
        shape = [1] * arr.ndim
        shape[axis] = new_len
        out += weights.reshape(shape) * np.take(arr, idx, axis=axis)
    return out


def resize_bicubic(arr: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Catmull-Rom bicubic resize of an image or mask, clamped to [0, 1].

    Accepts (H, W) masks and (H, W, C) images and returns the same kind.
    """
    if new_height < 1 or new_width < 1:
        raise ValueError("target dimensions must be >= 1")
    is_mask = np.asarray(arr).ndim == 2
    arr = as_mask(arr) if is_mask else as_image(arr)
    out = _resample_axis(arr, new_height, 0)
    out = _resample_axis(out, new_width, 1)
    return np.clip(out, 0.0, 1.0)


def random_resized_crop(
    mask: np.ndarray, target_h: int, target_w: int, rng: np.random.Generator
) -> np.ndarray:
    """Extract a target-sized window at a uniformly random top-left offset.

    The generator state advances deterministically (two draws per call).
    """
    mask = as_mask(mask)
    h, w = mask.shape
    if h < target_h or w < target_w:
        raise ValueError(f"mask {mask.shape} smaller than crop target ({target_h}, {target_w})")
    top = int(rng.integers(0, h - target_h + 1))
    left = int(rng.integers(0, w - target_w + 1))
    return mask[top : top + target_h, left : left + target_w].copy()


def composite(a: np.ndarray, b: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Per-pixel blend a*m + b*(1-m) with an (H, W) soft mask."""
    a = as_image(a)
    b = as_image(b)
    m = as_mask(m)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[:2] != m.shape:
        raise ValueError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
    blend = m[:, :, None]
    return a * blend + b * (1.0 - blend)
