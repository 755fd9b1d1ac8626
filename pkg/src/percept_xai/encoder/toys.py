"""Analytic toy encoders with known perceptual sensitivities.

Each toy is an exact mathematical function of the input image, so tests can
recompute its embeddings in closed form. The catalog covers one encoder per
sensitivity class (color / shape / texture), an invariant one, and an
identity-like one.
"""

from __future__ import annotations

import numpy as np

from ..imgproc import canny_edges, gaussian_blur

__all__ = ["toy_encoders", "toy_function", "toy_batch_function", "toy_embedding_dim", "TOY_NAMES"]

_BLUR_DIFF_SIGMA = 2.0
_CONSTANT_VECTOR = np.ones(8, dtype=np.float64)


def _block_mean(plane: np.ndarray, grid: int) -> np.ndarray:
    """Mean over a grid x grid partition of the plane (uneven blocks allowed)."""
    rows = np.array_split(plane, grid, axis=0)
    return np.array([[block.mean() for block in np.array_split(r, grid, axis=1)] for r in rows])


def _block_mean_batch(stack: np.ndarray, grid: int) -> np.ndarray:
    """(N, H, W) -> (N, grid, grid) block means; needs H, W divisible by grid."""
    n, h, w = stack.shape
    return stack.reshape(n, grid, h // grid, grid, w // grid).mean(axis=(2, 4))


def _mean_rgb(img: np.ndarray) -> np.ndarray:
    return img.reshape(-1, img.shape[2]).mean(axis=0)


def _mean_rgb_batch(batch: np.ndarray) -> np.ndarray:
    return batch.reshape(batch.shape[0], -1, batch.shape[3]).mean(axis=1)


def _edge_pool(img: np.ndarray) -> np.ndarray:
    edges = canny_edges(img)[:, :, 0]
    return _block_mean(edges, 8).ravel()


def _blur_diff(img: np.ndarray) -> np.ndarray:
    detail = np.abs(img - gaussian_blur(img, _BLUR_DIFF_SIGMA)).mean(axis=2)
    return _block_mean(detail, 8).ravel()


def _constant(img: np.ndarray) -> np.ndarray:
    return _CONSTANT_VECTOR.copy()


def _constant_batch(batch: np.ndarray) -> np.ndarray:
    return np.tile(_CONSTANT_VECTOR, (batch.shape[0], 1))


def _flatten_pool(img: np.ndarray) -> np.ndarray:
    pooled = np.stack([_block_mean(img[:, :, c], 4) for c in range(img.shape[2])], axis=2)
    return pooled.ravel()


def _flatten_pool_batch(batch: np.ndarray) -> np.ndarray:
    n, h, w, c = batch.shape
    if h % 4 or w % 4:
        return np.stack([_flatten_pool(img) for img in batch])
    planes = batch.transpose(0, 3, 1, 2).reshape(n * c, h, w)
    pooled = _block_mean_batch(planes, 4).reshape(n, c, 4, 4).transpose(0, 2, 3, 1)
    return pooled.reshape(n, -1)


# name -> (per-image fn, optional batched fn, dim, description)
_CATALOG = {
    "mean-rgb": (_mean_rgb, _mean_rgb_batch, 3, "per-channel spatial mean (color-sensitive)"),
    "edge-pool": (_edge_pool, None, 64, "Canny edge occupancy pooled on an 8x8 grid (shape-sensitive)"),
    "blur-diff": (_blur_diff, None, 64, "pooled |image - blur(image)| detail energy (texture-sensitive)"),
    "constant": (_constant, _constant_batch, 8, "fixed vector, invariant to the input"),
    "flatten-pool": (_flatten_pool, _flatten_pool_batch, 48, "4x4 average pool flattened per channel (identity-like)"),
}

TOY_NAMES = tuple(_CATALOG)


def _lookup(name: str):
    try:
        return _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown toy encoder '{name}'; available: {', '.join(_CATALOG)}") from None


def toy_encoders() -> dict[str, str]:
    """Catalog of toy encoder names and one-line descriptions."""
    return {name: entry[3] for name, entry in _CATALOG.items()}


def toy_function(name: str):
    """The per-image embedding function of a toy encoder."""
    return _lookup(name)[0]


def toy_batch_function(name: str):
    """A vectorized (N, H, W, C) batch embedding function, or None."""
    return _lookup(name)[1]


def toy_embedding_dim(name: str) -> int:
    return _lookup(name)[2]
